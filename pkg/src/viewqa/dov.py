"""Default-optimized viewpoint dataset construction.

For every (cloud variant, face) the trained rank scorer grades all grid
candidates and the worst-scoring one becomes the optimized viewpoint. Odd
grids contain the default viewpoint, so the optimized score can never
exceed the default's under the scorer's own ordering.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cloud import PointCloud, summarize
from .distort import DistortionLadder, DistortionSpec
from .projector import render
from .ranker import EmptyProjectionError, ScoreModel, extract_features, score
from .seeds import derive_seed
from .viewgeom import (
    CandidateGrid,
    default_viewpoints,
    random_rotation,
    rotated_viewpoints,
    sample_candidates,
)


@dataclass
class DOVRecord:
    """One (default viewpoint, optimized viewpoint) training row.

    candidate_scores holds one entry per grid candidate in grid order;
    None marks a candidate whose projection was empty and was excluded.
    candidate_rank_of_optimized is the optimized candidate's 1-based rank
    by descending score among valid candidates, which selection makes the
    worst rank by construction.
    """

    cloud_id: str
    distortion: DistortionSpec | None
    face_index: int
    default_viewpoint: np.ndarray
    optimized_viewpoint: np.ndarray
    candidate_scores: list
    candidate_rank_of_optimized: int

    def to_json(self) -> dict:
        return {
            "cloud_id": self.cloud_id,
            "distortion": "reference" if self.distortion is None else self.distortion.to_json(),
            "face_index": self.face_index,
            "default_viewpoint": [float(x) for x in self.default_viewpoint],
            "optimized_viewpoint": [float(x) for x in self.optimized_viewpoint],
            "candidate_scores": [
                None if s is None else float(s) for s in self.candidate_scores
            ],
            "candidate_rank_of_optimized": self.candidate_rank_of_optimized,
        }

    @staticmethod
    def from_json(obj: dict) -> "DOVRecord":
        dist = obj["distortion"]
        return DOVRecord(
            cloud_id=obj["cloud_id"],
            distortion=None if dist == "reference" else DistortionSpec.from_json(dist),
            face_index=int(obj["face_index"]),
            default_viewpoint=np.asarray(obj["default_viewpoint"], dtype=np.float64),
            optimized_viewpoint=np.asarray(obj["optimized_viewpoint"], dtype=np.float64),
            candidate_scores=obj["candidate_scores"],
            candidate_rank_of_optimized=int(obj["candidate_rank_of_optimized"]),
        )


def select_optimized(
    model: ScoreModel,
    cloud: PointCloud,
    grid: CandidateGrid,
    resolution: int = 256,
    splat_radius: int = 1,
    distortion: DistortionSpec | None = None,
    scorer=None,
    post_render=None,
) -> DOVRecord:
    """Score all candidates of one grid and pick the lowest.

    Ties break to the smaller candidate index. Candidates whose projection
    is empty are excluded; if every candidate is empty the grid fails.
    `scorer` (candidate_index, features, image) -> float and `post_render`
    (candidate_index, image) -> image are test hooks that default to the
    model score and the identity.
    """
    scores: list = []
    for j in range(grid.n_v):
        img = render(cloud, grid.candidate_view(j), resolution, splat_radius)
        if post_render is not None:
            img = post_render(j, img)
        try:
            feats = extract_features(img)
        except EmptyProjectionError:
            scores.append(None)
            continue
        if scorer is not None:
            scores.append(float(scorer(j, feats, img)))
        else:
            scores.append(score(model, feats))

    valid = [(s, j) for j, s in enumerate(scores) if s is not None]
    if not valid:
        raise ValueError(f"all {grid.n_v} candidate projections empty for {cloud.id}")
    best_score, best_j = min(valid, key=lambda t: (t[0], t[1]))
    return DOVRecord(
        cloud_id=cloud.id,
        distortion=distortion,
        face_index=grid.base.face_index,
        default_viewpoint=grid.base.viewpoint,
        optimized_viewpoint=grid.positions[best_j],
        candidate_scores=scores,
        candidate_rank_of_optimized=len(valid),
    )


def _ladder_variants(ladder: DistortionLadder):
    """Reference plus distorted variants as (sort_label, spec|None, cloud)."""
    rows = [("reference", None, ladder.reference)]
    for spec, cloud in ladder.variants:
        rows.append((spec.label(), spec, cloud))
    return rows


def _variant_records(args) -> list[DOVRecord]:
    """All records of one variant cloud; module-level for process pools."""
    (model, cloud, ref_id, label, spec, n_v,
     resolution, splat_radius, margin, rigs_per_cloud, seed) = args
    summary = summarize(cloud)
    rigs = [default_viewpoints(summary, margin)]
    rig_rng = np.random.default_rng(derive_seed(seed, "dov-rigs", ref_id, label))
    for _ in range(rigs_per_cloud):
        rigs.append(rotated_viewpoints(summary, random_rotation(rig_rng), margin))
    records = []
    for rig in rigs:
        for view in rig:
            grid = sample_candidates(view, n_v)
            records.append(
                select_optimized(model, cloud, grid, resolution, splat_radius, distortion=spec)
            )
    return records


def build_dov(
    ladders: list[DistortionLadder],
    model: ScoreModel,
    n_v: int,
    out_path=None,
    resolution: int = 256,
    splat_radius: int = 1,
    margin: float = 1.25,
    rigs_per_cloud: int = 0,
    seed: int = 0,
    workers: int = 1,
) -> list[DOVRecord]:
    """One record per (cloud variant, face), optionally plus random rigs.

    Variant clouds fan out over `workers` processes; per-variant rig seeds
    are derived by name, so the output is identical for any worker count.
    Records are sorted by (cloud_id, distortion label, face); rebuilding
    from identical inputs reproduces the manifest byte for byte. On
    failure any partial manifest is removed.
    """
    from .pipeline import pmap

    tasks = [
        (model, cloud, ladder.reference.id, label, spec, n_v,
         resolution, splat_radius, margin, rigs_per_cloud, seed)
        for ladder in ladders
        for label, spec, cloud in _ladder_variants(ladder)
    ]
    records = [rec for group in pmap(_variant_records, tasks, workers) for rec in group]

    records.sort(
        key=lambda r: (
            r.cloud_id,
            "" if r.distortion is None else r.distortion.label(),
            r.face_index,
            tuple(r.default_viewpoint),
        )
    )
    if out_path is not None:
        write_dov_manifest(records, out_path)
    return records


def write_dov_manifest(records: list[DOVRecord], path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".part")
    try:
        with open(tmp, "w") as f:
            for rec in records:
                f.write(json.dumps(rec.to_json(), sort_keys=True))
                f.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if tmp.exists():
            tmp.unlink()
        raise


def read_dov_manifest(path) -> list[DOVRecord]:
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(DOVRecord.from_json(json.loads(line)))
    return records
