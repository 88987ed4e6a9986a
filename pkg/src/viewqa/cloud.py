"""Colored point cloud I/O and basic geometric summaries.

PLY support covers ascii and binary-little-endian vertex data with float32
or float64 coordinates and optional uint8 red/green/blue. Faces, normals
and any other vertex properties are skipped. Positions are held in double
precision because the downstream direction/angle math is sensitive to
cancellation. Clouds are immutable after construction and safe to share
across workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

NEUTRAL_GRAY = (128, 128, 128)

# PLY scalar type name -> (numpy little-endian code, byte size)
_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


class PlyParseError(ValueError):
    """Malformed PLY content. Carries the 1-based header line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.line = line


@dataclass
class PointCloud:
    """An unordered colored point set.

    points: (N, 3) float64 positions in model units.
    colors: (N, 3) uint8 per-point RGB.
    id:     label used for filenames and manifests.
    """

    points: np.ndarray
    colors: np.ndarray
    id: str = "cloud"

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {pts.shape}")
        if pts.shape[0] == 0:
            raise ValueError("empty cloud")
        if not np.all(np.isfinite(pts)):
            raise ValueError("non-finite coordinates in point cloud")
        cols = np.asarray(self.colors)
        if cols.shape != pts.shape:
            raise ValueError(
                f"colors shape {cols.shape} does not match points {pts.shape}"
            )
        if cols.dtype != np.uint8:
            as_int = np.asarray(cols, dtype=np.int64)
            if as_int.min() < 0 or as_int.max() > 255:
                raise ValueError("colors outside [0, 255]")
            cols = as_int.astype(np.uint8)
        cols = np.ascontiguousarray(cols)
        pts.setflags(write=False)
        cols.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "colors", cols)

    def __len__(self) -> int:
        return self.points.shape[0]

    def with_id(self, new_id: str) -> "PointCloud":
        return PointCloud(self.points, self.colors, new_id)


@dataclass(frozen=True)
class CloudSummary:
    """Centroid, axis-aligned bounds and bbox diagonal of a cloud."""

    centroid: np.ndarray
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    diagonal: float


def summarize(cloud: PointCloud) -> CloudSummary:
    """Arithmetic-mean centroid plus componentwise bbox of a nonempty cloud."""
    pts = cloud.points
    centroid = pts.mean(axis=0)
    bbox_min = pts.min(axis=0)
    bbox_max = pts.max(axis=0)
    diagonal = float(np.linalg.norm(bbox_max - bbox_min))
    return CloudSummary(centroid, bbox_min, bbox_max, diagonal)


def _split_header(data: bytes) -> tuple[list[str], bytes, int]:
    """Split raw file bytes into header lines and the body after end_header."""
    marker = b"end_header"
    idx = data.find(marker)
    if idx < 0:
        raise PlyParseError("missing end_header")
    nl = data.find(b"\n", idx)
    if nl < 0:
        raise PlyParseError("missing newline after end_header")
    header_bytes = data[:nl]
    body = data[nl + 1:]
    lines = header_bytes.decode("latin-1").split("\n")
    lines = [ln.rstrip("\r") for ln in lines]
    return lines, body, len(lines)


def _parse_header(lines: list[str]):
    """Parse header lines into (format, ordered [(element, count, props)])."""
    if not lines or lines[0].strip() != "ply":
        raise PlyParseError("not a PLY file: first line must be 'ply'", line=1)
    fmt = None
    elements = []  # (name, count, [(prop_name, type_name)]) in declaration order
    for n, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("comment") or line.startswith("obj_info"):
            continue
        parts = line.split()
        if parts[0] == "format":
            if len(parts) < 2:
                raise PlyParseError("malformed format line", line=n)
            if parts[1] not in ("ascii", "binary_little_endian"):
                raise PlyParseError(f"unsupported format '{parts[1]}'", line=n)
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3:
                raise PlyParseError("malformed element line", line=n)
            try:
                count = int(parts[2])
            except ValueError:
                raise PlyParseError(f"bad element count '{parts[2]}'", line=n)
            elements.append((parts[1], count, []))
        elif parts[0] == "property":
            if not elements:
                raise PlyParseError("property before any element", line=n)
            if parts[1] == "list":
                if len(parts) != 5:
                    raise PlyParseError("malformed list property", line=n)
                elements[-1][2].append((parts[4], "list"))
            else:
                if len(parts) != 3:
                    raise PlyParseError("malformed property line", line=n)
                if parts[1] not in _PLY_TYPES:
                    raise PlyParseError(f"unknown property type '{parts[1]}'", line=n)
                elements[-1][2].append((parts[2], parts[1]))
        elif parts[0] == "end_header":
            break
        else:
            raise PlyParseError(f"unrecognized header keyword '{parts[0]}'", line=n)
    if fmt is None:
        raise PlyParseError("header missing format line")
    if not elements:
        raise PlyParseError("header declares no elements")
    return fmt, elements


def load_ply(path) -> PointCloud:
    """Load a PLY point cloud (ascii or binary little-endian vertices).

    x/y/z must be float32 or float64; red/green/blue, when present, must be
    uchar. Clouds without color receive neutral gray (128, 128, 128). Any
    extra scalar vertex properties are skipped; elements after the vertex
    element are ignored.
    """
    path = Path(path)
    data = path.read_bytes()
    lines, body, _ = _split_header(data)
    fmt, elements = _parse_header(lines)

    vertex_pos = next((i for i, (nm, _, _) in enumerate(elements) if nm == "vertex"), None)
    if vertex_pos is None:
        raise PlyParseError("no vertex element declared")
    for nm, count, _ in elements[:vertex_pos]:
        if count > 0:
            raise PlyParseError(f"element '{nm}' with data precedes vertex element; unsupported layout")
    _, n_verts, props = elements[vertex_pos]
    if n_verts == 0:
        raise ValueError("empty cloud")
    if any(t == "list" for _, t in props):
        raise PlyParseError("list properties on vertex element are unsupported")

    names = [nm for nm, _ in props]
    for coord in ("x", "y", "z"):
        if coord not in names:
            raise PlyParseError(f"vertex element missing '{coord}' property")
        t = props[names.index(coord)][1]
        if _PLY_TYPES[t] not in ("f4", "f8"):
            raise PlyParseError(f"vertex '{coord}' must be float32 or float64, got '{t}'")
    color_names = ("red", "green", "blue")
    n_color = sum(1 for c in color_names if c in names)
    if n_color not in (0, 3):
        raise PlyParseError("vertex color must declare all of red/green/blue or none")
    if n_color == 3:
        for c in color_names:
            t = props[names.index(c)][1]
            if _PLY_TYPES[t] != "u1":
                raise PlyParseError(f"vertex '{c}' must be uchar, got '{t}'")

    if fmt == "ascii":
        rows = [ln for ln in body.decode("latin-1").splitlines() if ln.strip()]
        if len(rows) < n_verts:
            raise PlyParseError(
                f"vertex data truncated: expected {n_verts} rows, got {len(rows)}"
            )
        xi, yi, zi = (names.index(c) for c in ("x", "y", "z"))
        pts = np.empty((n_verts, 3), dtype=np.float64)
        cols = np.full((n_verts, 3), NEUTRAL_GRAY, dtype=np.uint8)
        try:
            for r in range(n_verts):
                tok = rows[r].split()
                if len(tok) < len(names):
                    raise PlyParseError(f"vertex row {r} has {len(tok)} fields, expected {len(names)}")
                pts[r] = (float(tok[xi]), float(tok[yi]), float(tok[zi]))
                if n_color == 3:
                    ri, gi, bi = (names.index(c) for c in color_names)
                    rgb = (int(tok[ri]), int(tok[gi]), int(tok[bi]))
                    if min(rgb) < 0 or max(rgb) > 255:
                        raise PlyParseError(f"vertex row {r} color outside [0,255]")
                    cols[r] = rgb
        except ValueError as exc:
            if isinstance(exc, PlyParseError):
                raise
            raise PlyParseError(f"unparseable vertex data: {exc}")
    else:
        dtype = np.dtype([(nm, "<" + _PLY_TYPES[t]) for nm, t in props])
        need = dtype.itemsize * n_verts
        if len(body) < need:
            have = len(body) // dtype.itemsize
            raise PlyParseError(
                f"vertex data truncated: expected {n_verts} vertices, got {have}"
            )
        rec = np.frombuffer(body[:need], dtype=dtype)
        pts = np.stack(
            [rec["x"].astype(np.float64), rec["y"].astype(np.float64), rec["z"].astype(np.float64)],
            axis=1,
        )
        if n_color == 3:
            cols = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1)
        else:
            cols = np.full((n_verts, 3), NEUTRAL_GRAY, dtype=np.uint8)

    return PointCloud(pts, cols, id=path.stem)


def save_ply(cloud: PointCloud, path) -> None:
    """Write binary-little-endian PLY with double positions and uchar colors."""
    path = Path(path)
    n = len(cloud)
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {n}\n"
        "property double x\n"
        "property double y\n"
        "property double z\n"
        "property uchar red\n"
        "property uchar green\n"
        "property uchar blue\n"
        "end_header\n"
    )
    rec = np.empty(
        n,
        dtype=np.dtype(
            [("x", "<f8"), ("y", "<f8"), ("z", "<f8"),
             ("red", "u1"), ("green", "u1"), ("blue", "u1")]
        ),
    )
    rec["x"], rec["y"], rec["z"] = cloud.points[:, 0], cloud.points[:, 1], cloud.points[:, 2]
    rec["red"], rec["green"], rec["blue"] = cloud.colors[:, 0], cloud.colors[:, 1], cloud.colors[:, 2]
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(rec.tobytes())
