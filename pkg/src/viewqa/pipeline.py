"""End-to-end orchestration shared by the CLI, demos and acceptance tests."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .cloud import PointCloud, load_ply, summarize
from .distort import DistortionLadder, build_ladder, parse_kind, pseudo_mos
from .metrics import EvalSample
from .ranker import (
    FeatureStore,
    RankPair,
    generate_pairs,
    materialize_pairs,
    view_refs_from_grids,
    view_refs_from_views,
)
from .viewgeom import default_viewpoints, sample_candidates


def pmap(fn, items, workers: int = 1):
    """Order-preserving map, optionally fanned out over processes."""
    if workers <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def load_cloud_dir(path) -> list[PointCloud]:
    files = sorted(Path(path).glob("*.ply"))
    if not files:
        raise ValueError(f"no .ply files under {path}")
    return [load_ply(f) for f in files]


def build_ladders(clouds, kinds, levels: int, seed: int) -> list[DistortionLadder]:
    kinds = [parse_kind(k) if isinstance(k, str) else k for k in kinds]
    return [build_ladder(c, kinds, levels, seed) for c in clouds]


def ladder_view_refs(ladder: DistortionLadder, n_v: int | None, margin: float):
    """Candidate-view refs from the reference cloud's rig.

    n_v None means the six default viewpoints themselves; otherwise every
    candidate of each face grid. Pairs compare two levels from the exact
    same viewpoint, so the rig comes from the reference cloud.
    """
    rig = default_viewpoints(summarize(ladder.reference), margin)
    if n_v is None:
        return view_refs_from_views(rig)
    return view_refs_from_grids([sample_candidates(v, n_v) for v in rig])


def rank_pair_dataset(
    ladders,
    n_v: int | None,
    margin: float,
    resolution: int,
    splat_radius: int,
    seed: int,
) -> tuple[list[RankPair], FeatureStore]:
    """Generate and materialize rank pairs for every ladder."""
    store = FeatureStore(resolution, splat_radius)
    pairs: list[RankPair] = []
    for ladder in ladders:
        refs = ladder_view_refs(ladder, n_v, margin)
        lp = generate_pairs(ladder, refs, seed)
        materialize_pairs(ladder, refs, lp, store)
        pairs.extend(lp)
    return pairs, store


def eval_dataset(ladders) -> list[EvalSample]:
    """(reference, degraded, pseudo-MOS) rows for every ladder variant."""
    samples = []
    for ladder in ladders:
        for spec, cloud in ladder.variants:
            samples.append(EvalSample(ladder.reference, cloud, pseudo_mos(spec)))
    return samples


def all_ladder_clouds(ladders) -> dict[str, PointCloud]:
    """Every cloud in the ladders keyed by id (reference and variants)."""
    out: dict[str, PointCloud] = {}
    for ladder in ladders:
        out[ladder.reference.id] = ladder.reference
        for _, cloud in ladder.variants:
            out[cloud.id] = cloud
    return out
