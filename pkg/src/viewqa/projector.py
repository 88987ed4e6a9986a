"""Orthographic z-buffered point splatting.

Points map to the view's region plane through the in-plane frame; every
point stamps a small disc of pixels, and each pixel keeps the contribution
nearest to the viewer along the view direction. Equal depths resolve to
the lowest point index, so output is independent of point order and of
any parallel schedule across images.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .cloud import PointCloud
from .viewgeom import ViewSetup


@dataclass
class ProjectedImage:
    """Square color+depth raster with a coverage mask.

    depth holds the metric distance along -direction, +inf on background;
    point_index holds the winning point per pixel, -1 on background. Row
    iy corresponds to plane v ascending, column ix to plane u ascending.
    """

    width: int
    height: int
    color: np.ndarray        # (H, W, 3) uint8
    depth: np.ndarray        # (H, W) float64
    mask: np.ndarray         # (H, W) bool
    point_index: np.ndarray  # (H, W) int64
    view: ViewSetup
    splat_radius: int

    @property
    def coverage(self) -> float:
        return float(self.mask.mean())


def _disc_offsets(radius: int) -> np.ndarray:
    r = int(radius)
    offs = [
        (dx, dy)
        for dy in range(-r, r + 1)
        for dx in range(-r, r + 1)
        if dx * dx + dy * dy <= r * r
    ]
    return np.asarray(offs, dtype=np.int64)


def render(
    cloud: PointCloud,
    view: ViewSetup,
    resolution: int = 256,
    splat_radius: int = 1,
) -> ProjectedImage:
    """Render a cloud to a square raster by orthographic point splatting.

    Pixel mapping for a point at in-plane (u, v):
        ix = floor((u + h) / (2h) * resolution), clamped to the last pixel
        when u == h; same for iy from v. Points with |u| > h or |v| > h are
    clipped. Depth key is (p - viewpoint) . (-direction); the smallest key
    wins each pixel of the point's splat disc, ties to the lowest index.
    """
    if resolution < 16:
        raise ValueError("resolution must be >= 16")
    if splat_radius < 0:
        raise ValueError("splat_radius must be >= 0")
    res = int(resolution)
    h = view.region_half_extent
    vp, fu, fv, d = view.viewpoint, view.frame_u, view.frame_v, view.direction

    dx = cloud.points[:, 0] - vp[0]
    dy = cloud.points[:, 1] - vp[1]
    dz = cloud.points[:, 2] - vp[2]
    u = dx * fu[0] + dy * fu[1] + dz * fu[2]
    v = dx * fv[0] + dy * fv[1] + dz * fv[2]
    depth = -(dx * d[0] + dy * d[1] + dz * d[2])

    inside = (u >= -h) & (u <= h) & (v >= -h) & (v <= h)
    idx = np.nonzero(inside)[0]
    color = np.zeros((res, res, 3), dtype=np.uint8)
    zbuf = np.full((res, res), np.inf, dtype=np.float64)
    mask = np.zeros((res, res), dtype=bool)
    windex = np.full((res, res), -1, dtype=np.int64)
    if idx.size:
        ix = np.minimum(np.floor((u[idx] + h) / (2.0 * h) * res).astype(np.int64), res - 1)
        iy = np.minimum(np.floor((v[idx] + h) / (2.0 * h) * res).astype(np.int64), res - 1)
        pdepth = depth[idx]

        offs = _disc_offsets(splat_radius)
        jx = (ix[None, :] + offs[:, 0:1]).ravel()
        jy = (iy[None, :] + offs[:, 1:2]).ravel()
        jdepth = np.broadcast_to(pdepth, (offs.shape[0], idx.size)).ravel()
        jidx = np.broadcast_to(idx, (offs.shape[0], idx.size)).ravel()
        ok = (jx >= 0) & (jx < res) & (jy >= 0) & (jy < res)
        jx, jy, jdepth, jidx = jx[ok], jy[ok], jdepth[ok], jidx[ok]

        if jx.size:
            pid = jy * res + jx
            order = np.lexsort((jidx, jdepth))  # by depth, then point index
            pid_sorted = pid[order]
            _, first = np.unique(pid_sorted, return_index=True)
            win = order[first]
            wy, wx = pid[win] // res, pid[win] % res
            zbuf[wy, wx] = jdepth[win]
            windex[wy, wx] = jidx[win]
            mask[wy, wx] = True
            color[wy, wx] = cloud.colors[jidx[win]]

    return ProjectedImage(
        width=res,
        height=res,
        color=color,
        depth=zbuf,
        mask=mask,
        point_index=windex,
        view=view,
        splat_radius=int(splat_radius),
    )


def render_face_set(cloud: PointCloud, views, resolution: int = 256, splat_radius: int = 1):
    """Element-wise render over a list of views, order preserved."""
    return [render(cloud, v, resolution, splat_radius) for v in views]


def save_png(img: ProjectedImage, path) -> None:
    """Write the color raster as PNG, flipped so +v points up."""
    Image.fromarray(img.color[::-1, :, :]).save(Path(path), format="PNG")


def save_depth(img: ProjectedImage, path) -> None:
    """Raw dump: 8-byte header (width, height as uint32 LE) + float32 LE rows."""
    with open(path, "wb") as f:
        f.write(struct.pack("<II", img.width, img.height))
        f.write(img.depth.astype("<f4").tobytes())


def load_depth(path) -> np.ndarray:
    data = Path(path).read_bytes()
    w, h = struct.unpack("<II", data[:8])
    return np.frombuffer(data[8:], dtype="<f4").reshape(h, w)
