"""Graded distortion synthesis for reference clouds.

Four distortion families with an L-step intensity ladder each: additive
color noise, additive geometry noise, random downsampling, and octree-style
coordinate quantization. Magnitudes are chosen so a simple severity proxy
is strictly monotone in level, which is all the self-supervised pair
labels rely on. Everything is deterministic given the DistortionSpec seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud, summarize
from .seeds import derive_seed


class DistortionKind(str, Enum):
    COLOR_NOISE = "cn"
    GEOMETRY_GAUSSIAN_NOISE = "ggn"
    DOWNSAMPLE = "ds"
    OCTREE_QUANTIZE = "ot"


ALL_KINDS = (
    DistortionKind.OCTREE_QUANTIZE,
    DistortionKind.COLOR_NOISE,
    DistortionKind.DOWNSAMPLE,
    DistortionKind.GEOMETRY_GAUSSIAN_NOISE,
)


def parse_kind(name: str) -> DistortionKind:
    try:
        return DistortionKind(name.strip().lower())
    except ValueError:
        raise ValueError(f"unknown distortion kind '{name}'")


@dataclass(frozen=True)
class DistortionSpec:
    """One distortion at one intensity step of an L-level ladder."""

    kind: DistortionKind
    level: int
    levels: int
    seed: int = 0

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if not 1 <= self.level <= self.levels:
            raise ValueError(f"level {self.level} outside 1..{self.levels}")

    @property
    def alpha(self) -> float:
        return self.level / self.levels

    def label(self) -> str:
        return f"{self.kind.value}_{self.level}"

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "level": self.level,
            "levels": self.levels,
            "seed": self.seed,
        }

    @staticmethod
    def from_json(obj: dict) -> "DistortionSpec":
        return DistortionSpec(
            parse_kind(obj["kind"]), int(obj["level"]), int(obj["levels"]), int(obj["seed"])
        )


@dataclass
class DistortionLadder:
    """A reference cloud plus its T*L graded variants (kind-major order)."""

    reference: PointCloud
    variants: list  # [(DistortionSpec, PointCloud)]
    kinds: tuple
    levels: int

    @property
    def T(self) -> int:
        return len(self.kinds)

    @property
    def L(self) -> int:
        return self.levels


def _quantize_cells(alpha: float) -> int:
    # round-half-up keeps the cell ladder strictly decreasing for L <= 6
    return 2 ** (10 - int(np.floor(6.0 * alpha + 0.5)))


def apply_distortion(cloud: PointCloud, spec: DistortionSpec) -> PointCloud:
    """Apply one distortion spec; deterministic given spec.seed.

    Level l of L maps to intensity alpha = l/L:
      cn:  iid Gaussian(0, (40*alpha)^2) per color channel, clamped to [0,255]
      ggn: iid Gaussian(0, (0.01*alpha*diagonal)^2) per coordinate
      ds:  keep a uniformly random fraction (1 - 0.8*alpha), at least 1 point
      ot:  snap coordinates to the lattice of 2^(10-round(6*alpha)) cells per
           bbox axis, merging coincident points with color averaging
    """
    if len(cloud) == 0:
        raise ValueError("empty cloud")
    alpha = spec.alpha
    rng = np.random.default_rng(spec.seed)
    out_id = f"{cloud.id}__{spec.label()}"

    if spec.kind is DistortionKind.COLOR_NOISE:
        noise = rng.normal(0.0, 40.0 * alpha, size=cloud.colors.shape)
        cols = np.clip(np.rint(cloud.colors.astype(np.float64) + noise), 0, 255)
        return PointCloud(cloud.points, cols.astype(np.uint8), out_id)

    if spec.kind is DistortionKind.GEOMETRY_GAUSSIAN_NOISE:
        sigma = 0.01 * alpha * summarize(cloud).diagonal
        pts = cloud.points + rng.normal(0.0, sigma, size=cloud.points.shape)
        return PointCloud(pts, cloud.colors, out_id)

    if spec.kind is DistortionKind.DOWNSAMPLE:
        n = len(cloud)
        keep = max(1, int(round(n * (1.0 - 0.8 * alpha))))
        if keep == 0:
            raise ValueError("downsample removed every point")
        idx = np.sort(rng.choice(n, size=keep, replace=False))
        return PointCloud(cloud.points[idx], cloud.colors[idx], out_id)

    if spec.kind is DistortionKind.OCTREE_QUANTIZE:
        cells = _quantize_cells(alpha)
        s = summarize(cloud)
        extent = s.bbox_max - s.bbox_min
        snapped = cloud.points.copy()
        for ax in range(3):
            if extent[ax] == 0.0:
                snapped[:, ax] = s.bbox_min[ax]
                continue
            size = extent[ax] / cells
            idx = np.clip(np.rint((cloud.points[:, ax] - s.bbox_min[ax]) / size), 0, cells)
            snapped[:, ax] = s.bbox_min[ax] + idx * size
        return _merge_coincident(snapped, cloud.colors, out_id)

    raise ValueError(f"unknown distortion kind '{spec.kind}'")


def _merge_coincident(points: np.ndarray, colors: np.ndarray, out_id: str) -> PointCloud:
    """Deduplicate identical positions, averaging colors, first-seen order."""
    keys = np.ascontiguousarray(points).view([("", points.dtype)] * 3).ravel()
    _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")  # group ids by first occurrence
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    group = rank[inverse]  # group index in first-seen order
    n_groups = order.size
    acc = np.zeros((n_groups, 3), dtype=np.float64)
    cnt = np.zeros(n_groups, dtype=np.int64)
    np.add.at(acc, group, colors.astype(np.float64))
    np.add.at(cnt, group, 1)
    mean_cols = np.rint(acc / cnt[:, None]).astype(np.uint8)
    uniq_pts = points[first[order]]
    return PointCloud(uniq_pts, mean_cols, out_id)


def build_ladder(cloud: PointCloud, kinds, levels: int, seed: int) -> DistortionLadder:
    """Build the kind-major, level-minor variant set for one reference cloud."""
    kinds = tuple(kinds)
    if levels < 2:
        raise ValueError("ladder needs at least 2 levels")
    if not kinds:
        raise ValueError("ladder needs at least one distortion kind")
    variants = []
    for kind in kinds:
        for level in range(1, levels + 1):
            spec = DistortionSpec(
                kind, level, levels, derive_seed(seed, "distort", cloud.id, kind.value, level)
            )
            variants.append((spec, apply_distortion(cloud, spec)))
    return DistortionLadder(cloud, variants, kinds, levels)


def apply_sequence(cloud: PointCloud, specs) -> PointCloud:
    """Sequential composition, for mixed distortions requested explicitly."""
    out = cloud
    for spec in specs:
        out = apply_distortion(out, spec)
    return out


def pseudo_mos(spec: DistortionSpec | None) -> float:
    """Monotone stand-in for a human opinion score; reference scores 100."""
    if spec is None:
        return 100.0
    return 100.0 * (1.0 - spec.level / (spec.levels + 1.0))


def severity(reference: PointCloud, variant: PointCloud, spec: DistortionSpec) -> float:
    """Scalar severity proxy used by the monotonicity checks.

    cn: mean absolute color delta; ds: removed point fraction;
    ggn: mean per-point displacement; ot: mean distance to the nearest
    surviving point.
    """
    if spec.kind is DistortionKind.COLOR_NOISE:
        d = variant.colors.astype(np.float64) - reference.colors.astype(np.float64)
        return float(np.abs(d).mean())
    if spec.kind is DistortionKind.DOWNSAMPLE:
        return 1.0 - len(variant) / len(reference)
    if spec.kind is DistortionKind.GEOMETRY_GAUSSIAN_NOISE:
        return float(np.linalg.norm(variant.points - reference.points, axis=1).mean())
    if spec.kind is DistortionKind.OCTREE_QUANTIZE:
        dist, _ = cKDTree(variant.points).query(reference.points)
        return float(np.mean(dist))
    raise ValueError(f"unknown distortion kind '{spec.kind}'")


def variant_filename(cloud_id: str, spec: DistortionSpec) -> str:
    return f"{cloud_id}__{spec.kind.value}_{spec.level}.ply"
