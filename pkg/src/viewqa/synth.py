"""Parametric synthetic clouds for demos and desk-scale experiments.

Shapes vary in silhouette, occlusion structure and color statistics so
viewpoint choice actually matters. All generators are seeded.
"""

from __future__ import annotations

import numpy as np

from .cloud import PointCloud


def _colorize(base: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(base * 255.0), 0, 255).astype(np.uint8)


def sphere_cloud(n: int = 1500, seed: int = 0, id: str = "sphere") -> PointCloud:
    """Jittered sphere shell with latitude color bands."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = 1.0 + 0.03 * rng.normal(size=(n, 1))
    pts = v * r
    lat = (pts[:, 2] + 1.2) / 2.4
    cols = np.stack([lat, 0.2 + 0.6 * np.sin(6 * np.pi * lat) ** 2, 1.0 - lat], axis=1)
    return PointCloud(pts, _colorize(cols), id)


def box_cloud(n: int = 1500, seed: int = 1, id: str = "box") -> PointCloud:
    """Solid box with a 3D checker texture."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * np.array([1.0, 0.7, 0.5])
    parity = np.floor(pts * 3.0).sum(axis=1) % 2
    base = np.where(parity[:, None] > 0.5, np.array([0.9, 0.85, 0.2]), np.array([0.15, 0.2, 0.8]))
    return PointCloud(pts, _colorize(base), id)


def torus_cloud(n: int = 1500, seed: int = 2, id: str = "torus") -> PointCloud:
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0, 2 * np.pi, n)
    phi = rng.uniform(0, 2 * np.pi, n)
    R, r = 1.0, 0.35
    x = (R + r * np.cos(phi)) * np.cos(theta)
    y = (R + r * np.cos(phi)) * np.sin(theta)
    z = r * np.sin(phi)
    pts = np.stack([x, y, z], axis=1)
    cols = np.stack(
        [0.5 + 0.5 * np.cos(theta), 0.5 + 0.5 * np.sin(2 * theta), 0.5 + 0.5 * np.cos(phi)],
        axis=1,
    )
    return PointCloud(pts, _colorize(cols), id)


def blobs_cloud(n: int = 1500, seed: int = 3, id: str = "blobs") -> PointCloud:
    """A few well-separated Gaussian clusters, one color each."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-1.0, 1.0, size=(4, 3))
    palette = np.array(
        [[0.9, 0.2, 0.2], [0.2, 0.9, 0.3], [0.25, 0.3, 0.9], [0.9, 0.8, 0.2]]
    )
    which = rng.integers(0, 4, n)
    pts = centers[which] + 0.18 * rng.normal(size=(n, 3))
    cols = palette[which] + 0.05 * rng.normal(size=(n, 3))
    return PointCloud(pts, _colorize(np.clip(cols, 0, 1)), id)


def helix_cloud(n: int = 1500, seed: int = 4, id: str = "helix") -> PointCloud:
    rng = np.random.default_rng(seed)
    t = rng.uniform(0, 6 * np.pi, n)
    pts = np.stack([np.cos(t), np.sin(t), t / (3 * np.pi) - 1.0], axis=1)
    pts += 0.05 * rng.normal(size=(n, 3))
    cols = np.stack([t / (6 * np.pi), 1.0 - t / (6 * np.pi), 0.4 + 0.3 * np.cos(t)], axis=1)
    return PointCloud(pts, _colorize(np.clip(cols, 0, 1)), id)


def ridged_plane_cloud(n: int = 1500, seed: int = 5, id: str = "ridges") -> PointCloud:
    """Height-field slab; strong view asymmetry between top and side."""
    rng = np.random.default_rng(seed)
    xy = rng.uniform(-1.0, 1.0, size=(n, 2))
    z = 0.25 * np.sin(4 * np.pi * xy[:, 0]) * np.cos(3 * np.pi * xy[:, 1])
    pts = np.column_stack([xy, z + 0.02 * rng.normal(size=n)])
    shade = (z - z.min()) / (np.ptp(z) + 1e-9)
    cols = np.stack([shade, 0.6 * np.ones_like(shade), 1.0 - shade], axis=1)
    return PointCloud(pts, _colorize(cols), id)


def cylinder_cloud(n: int = 1500, seed: int = 6, id: str = "cylinder") -> PointCloud:
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0, 2 * np.pi, n)
    z = rng.uniform(-1.0, 1.0, n)
    r = 0.6 + 0.02 * rng.normal(size=n)
    pts = np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)
    stripes = (np.floor(theta / (np.pi / 4)) % 2)[:, None]
    cols = stripes * np.array([0.85, 0.3, 0.1]) + (1 - stripes) * np.array([0.1, 0.4, 0.85])
    return PointCloud(pts, _colorize(cols), id)


def shell_cluster_cloud(n: int = 1500, seed: int = 7, id: str = "shellmix") -> PointCloud:
    """Half-shell plus an interior cluster; one side occludes the other."""
    rng = np.random.default_rng(seed)
    m = n // 2
    v = rng.normal(size=(m, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    v[:, 0] = np.abs(v[:, 0])
    shell = v * (1.0 + 0.02 * rng.normal(size=(m, 1)))
    inner = 0.25 * rng.normal(size=(n - m, 3)) + np.array([-0.3, 0.0, 0.0])
    pts = np.vstack([shell, inner])
    cols = np.vstack(
        [np.tile([0.8, 0.75, 0.7], (m, 1)), np.tile([0.2, 0.8, 0.4], (n - m, 1))]
    )
    cols += 0.05 * rng.normal(size=cols.shape)
    return PointCloud(pts, _colorize(np.clip(cols, 0, 1)), id)


_GENERATORS = (
    sphere_cloud, box_cloud, torus_cloud, blobs_cloud,
    helix_cloud, ridged_plane_cloud, cylinder_cloud, shell_cluster_cloud,
)


def make_demo_clouds(count: int = 8, points: int = 1500, seed: int = 0) -> list[PointCloud]:
    """`count` varied clouds; beyond 8 the shape cycle repeats reseeded."""
    clouds = []
    for i in range(count):
        gen = _GENERATORS[i % len(_GENERATORS)]
        cid = f"{gen.__name__.removesuffix('_cloud')}{i:02d}"
        clouds.append(gen(n=points, seed=seed + i, id=cid))
    return clouds
