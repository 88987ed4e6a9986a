"""Viewpoints, projection regions and candidate grids.

A view is a point v with direction d = v - c toward the cloud center c and
a square projection region through v perpendicular to d, spanned by an
orthonormal frame (u, v-axis) with u x v = d. Default views sit at the six
face centers of an axis-aligned cube around the cloud; candidates are
sampled on a view's region plane and re-aim at the center.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import CloudSummary

VALID_GRID_SIZES = (9, 25, 49)

# face_index -> (axis, sign); 0..5 = +X, -X, +Y, -Y, +Z, -Z
_FACES = ((0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0), (2, 1.0), (2, -1.0))

# fixed axis convention for the in-plane frame, sign-adjusted so u x v = d
_FACE_FRAMES = (
    ((0.0, 1.0, 0.0), (0.0, 0.0, 1.0)),    # +X: u=+Y, v=+Z
    ((0.0, 1.0, 0.0), (0.0, 0.0, -1.0)),   # -X: u=+Y, v=-Z
    ((1.0, 0.0, 0.0), (0.0, 0.0, -1.0)),   # +Y: u=+X, v=-Z
    ((1.0, 0.0, 0.0), (0.0, 0.0, 1.0)),    # -Y: u=+X, v=+Z
    ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0)),    # +Z: u=+X, v=+Y
    ((1.0, 0.0, 0.0), (0.0, -1.0, 0.0)),   # -Z: u=+X, v=-Y
)


@dataclass(frozen=True)
class ViewSetup:
    """A viewpoint with its projection region and local plane frame."""

    viewpoint: np.ndarray
    center: np.ndarray
    direction: np.ndarray          # unit vector, viewpoint - center normalized
    region_half_extent: float
    frame_u: np.ndarray
    frame_v: np.ndarray
    face_index: int

    def __post_init__(self):
        for name in ("viewpoint", "center", "direction", "frame_u", "frame_v"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    def to_json_row(self, cloud_id: str) -> dict:
        return {
            "cloud_id": cloud_id,
            "face_index": self.face_index,
            "position": [float(x) for x in self.viewpoint],
            "direction": [float(x) for x in self.direction],
        }


@dataclass(frozen=True)
class CandidateGrid:
    """A sqrt(N)xsqrt(N) grid of candidate viewpoints on a region plane."""

    base: ViewSetup
    n_v: int
    positions: np.ndarray   # (N, 3), row-major over (v-row, u-col) cells
    directions: np.ndarray  # (N, 3), each normalize(position - center)

    def __len__(self) -> int:
        return self.n_v

    @property
    def side(self) -> int:
        return int(round(np.sqrt(self.n_v)))

    @property
    def center_index(self) -> int:
        return self.n_v // 2

    def candidate_view(self, j: int) -> ViewSetup:
        """Full view setup for candidate j, plane re-oriented to its direction."""
        d = self.directions[j]
        u, v = frame_for_direction(d, self.base.frame_u)
        return ViewSetup(
            viewpoint=self.positions[j],
            center=self.base.center,
            direction=d,
            region_half_extent=self.base.region_half_extent,
            frame_u=u,
            frame_v=v,
            face_index=self.base.face_index,
        )


def default_viewpoints(summary: CloudSummary, margin: float = 1.25) -> list[ViewSetup]:
    """Six cube-face views around the cloud.

    The cube half-side and the region half-extent are both
    margin * (largest bbox half-extent), so the region covers the cloud's
    silhouette from any face.
    """
    if margin < 1.0:
        raise ValueError("margin must be >= 1")
    half_extents = (summary.bbox_max - summary.bbox_min) / 2.0
    h = margin * float(half_extents.max())
    if h <= 0.0:
        raise ValueError("degenerate bbox: cloud has zero extent on every axis")
    views = []
    for face, ((axis, sign), (fu, fv)) in enumerate(zip(_FACES, _FACE_FRAMES)):
        vp = summary.centroid.copy()
        vp[axis] += sign * h
        d = np.zeros(3)
        d[axis] = sign
        views.append(
            ViewSetup(
                viewpoint=vp,
                center=summary.centroid,
                direction=d,
                region_half_extent=h,
                frame_u=np.array(fu),
                frame_v=np.array(fv),
                face_index=face,
            )
        )
    return views


def sample_candidates(base: ViewSetup, n_v: int) -> CandidateGrid:
    """Uniform cell-center grid of candidate viewpoints on the region plane.

    Offsets along each frame axis are (k - (n-1)/2) * (2h/n) for
    k = 0..n-1 (equivalently -h + (k+0.5) * 2h/n), so odd grids place the
    central candidate exactly at the base viewpoint. Candidate j sits at
    row-major cell (j // n, j % n) = (v-row, u-col).
    """
    if n_v not in VALID_GRID_SIZES:
        raise ValueError(f"N_v must be one of {VALID_GRID_SIZES}, got {n_v}")
    n = int(round(np.sqrt(n_v)))
    h = base.region_half_extent
    step = 2.0 * h / n
    offsets = (np.arange(n) - (n - 1) / 2.0) * step
    positions = np.empty((n_v, 3), dtype=np.float64)
    directions = np.empty((n_v, 3), dtype=np.float64)
    for kv in range(n):
        for ku in range(n):
            j = kv * n + ku
            p = base.viewpoint + offsets[ku] * base.frame_u + offsets[kv] * base.frame_v
            positions[j] = p
            dvec = p - base.center
            directions[j] = dvec / np.linalg.norm(dvec)
    return CandidateGrid(base=base, n_v=n_v, positions=positions, directions=directions)


def plane_coords(view: ViewSetup, p) -> tuple[float, float]:
    """In-plane (u, v) coordinates of p relative to the view's viewpoint."""
    rel = np.asarray(p, dtype=np.float64) - view.viewpoint
    return float(rel @ view.frame_u), float(rel @ view.frame_v)


def lift(view: ViewSetup, u: float, v: float) -> np.ndarray:
    """Inverse of plane_coords: the 3D point at in-plane (u, v)."""
    return view.viewpoint + u * view.frame_u + v * view.frame_v


def frame_for_direction(direction, u_hint) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal in-plane frame for a unit direction, right-handed u x v = d.

    u is the Gram-Schmidt projection of u_hint onto the plane perpendicular
    to direction; degenerate hints fall back to the canonical hint for the
    dominant axis.
    """
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    u = np.asarray(u_hint, dtype=np.float64) - (np.asarray(u_hint) @ d) * d
    nu = np.linalg.norm(u)
    if nu < 1e-12:
        u = _canonical_u_hint(d) - (_canonical_u_hint(d) @ d) * d
        nu = np.linalg.norm(u)
    u = u / nu
    v = np.cross(d, u)
    v = v / np.linalg.norm(v)
    return u, v


def _canonical_u_hint(direction: np.ndarray) -> np.ndarray:
    axis = int(np.argmax(np.abs(direction)))
    return np.array([0.0, 1.0, 0.0]) if axis == 0 else np.array([1.0, 0.0, 0.0])


def view_setup_for(
    summary: CloudSummary, viewpoint, face_index: int, margin: float = 1.25
) -> ViewSetup:
    """Reconstruct a view setup from a stored viewpoint and the cloud summary.

    Uses the deterministic dominant-axis frame rule, which reproduces the
    six canonical face frames exactly; for off-axis viewpoints the frame is
    a deterministic in-plane basis.
    """
    vp = np.asarray(viewpoint, dtype=np.float64)
    half_extents = (summary.bbox_max - summary.bbox_min) / 2.0
    h = margin * float(half_extents.max())
    dvec = vp - summary.centroid
    norm = np.linalg.norm(dvec)
    if norm == 0.0:
        raise ValueError("viewpoint coincides with cloud center")
    d = dvec / norm
    u, v = frame_for_direction(d, _canonical_u_hint(d))
    return ViewSetup(
        viewpoint=vp,
        center=summary.centroid,
        direction=d,
        region_half_extent=h,
        frame_u=u,
        frame_v=v,
        face_index=face_index,
    )


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation matrix (Haar measure via sign-fixed QR)."""
    a = rng.normal(size=(3, 3))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def rotated_viewpoints(
    summary: CloudSummary, rotation: np.ndarray, margin: float = 1.25
) -> list[ViewSetup]:
    """The six cube-face views under a rigid rotation of the whole rig."""
    views = []
    for base in default_viewpoints(summary, margin):
        d = rotation @ base.direction
        u = rotation @ base.frame_u
        v = rotation @ base.frame_v
        vp = summary.centroid + base.region_half_extent * d
        views.append(
            ViewSetup(
                viewpoint=vp,
                center=summary.centroid,
                direction=d,
                region_half_extent=base.region_half_extent,
                frame_u=u,
                frame_v=v,
                face_index=base.face_index,
            )
        )
    return views
