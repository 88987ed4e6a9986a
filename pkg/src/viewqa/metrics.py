"""Correlation metrics, the baseline full-reference scorer, and harnesses.

plcc/srcc/krcc reduce through math.fsum (exactly rounded sums), so results
are reproducible to the bit and comparable against brute-force oracles.
The baseline scorer renders reference and degraded clouds from identical
views and averages a windowed luminance structural term with a bounded
depth-fidelity term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter

from .cloud import PointCloud, summarize
from .projector import ProjectedImage, render
from .ranker import EmptyProjectionError, ScoreModel, extract_features, score
from .seeds import derive_seed
from .viewgeom import (
    ViewSetup,
    default_viewpoints,
    frame_for_direction,
    lift,
    sample_candidates,
)

SSIM_WINDOW = 8
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
DEPTH_PSNR_CAP_DB = 120.0


class DegenerateSeriesError(ValueError):
    pass


def _check_series(pred, target) -> tuple[list, list]:
    pred = [float(v) for v in pred]
    target = [float(v) for v in target]
    if len(pred) != len(target):
        raise ValueError("series lengths differ")
    if len(pred) < 3:
        raise ValueError("need at least 3 paired values")
    if not all(math.isfinite(v) for v in pred + target):
        raise ValueError("non-finite values in series")
    return pred, target


def _pearson(x: list, y: list) -> float:
    n = len(x)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    dx = [v - mx for v in x]
    dy = [v - my for v in y]
    sxx = math.fsum(a * a for a in dx)
    syy = math.fsum(b * b for b in dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateSeriesError("degenerate series")
    sxy = math.fsum(a * b for a, b in zip(dx, dy))
    return sxy / math.sqrt(sxx * syy)


def average_ranks(values) -> list[float]:
    """1-based ranks with ties averaged."""
    v = list(values)
    n = len(v)
    order = sorted(range(n), key=lambda i: v[i])
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and v[order[j + 1]] == v[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for t in range(i, j + 1):
            ranks[order[t]] = avg
        i = j + 1
    return ranks


def plcc(pred, target) -> float:
    """Pearson linear correlation on raw values."""
    pred, target = _check_series(pred, target)
    return _pearson(pred, target)


def srcc(pred, target) -> float:
    """Spearman rank correlation: Pearson on average-ranked values."""
    pred, target = _check_series(pred, target)
    return _pearson(average_ranks(pred), average_ranks(target))


def krcc(pred, target) -> float:
    """Kendall tau-b with tie correction."""
    pred, target = _check_series(pred, target)
    x = np.asarray(pred)
    y = np.asarray(target)
    n = len(pred)
    sx = np.sign(x[:, None] - x[None, :])
    sy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(n, k=1)
    prod = sx[iu] * sy[iu]
    concordant = int((prod > 0).sum())
    discordant = int((prod < 0).sum())
    ties_x = int((sx[iu] == 0).sum())
    ties_y = int((sy[iu] == 0).sum())
    n0 = n * (n - 1) // 2
    if n0 - ties_x == 0 or n0 - ties_y == 0:
        raise DegenerateSeriesError("degenerate series")
    return (concordant - discordant) / math.sqrt((n0 - ties_x) * (n0 - ties_y))


def consistency_index(human: list, ssvrn_worst: list) -> float:
    """Fraction of groups where the human choice matches the model's worst."""
    if len(human) != len(ssvrn_worst):
        raise ValueError("selection lists have different lengths")
    if not human:
        raise ValueError("no groups")
    matches = sum(1 for a, b in zip(human, ssvrn_worst) if int(a) == int(b))
    return matches / len(human)


# ---------------------------------------------------------------------------
# baseline full-reference projection scorer


def _luminance(img: ProjectedImage) -> np.ndarray:
    rgb = img.color.astype(np.float64) / 255.0
    return 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]


def _ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    mu1 = uniform_filter(a, SSIM_WINDOW)
    mu2 = uniform_filter(b, SSIM_WINDOW)
    s11 = uniform_filter(a * a, SSIM_WINDOW) - mu1 * mu1
    s22 = uniform_filter(b * b, SSIM_WINDOW) - mu2 * mu2
    s12 = uniform_filter(a * b, SSIM_WINDOW) - mu1 * mu2
    num = (2.0 * mu1 * mu2 + SSIM_C1) * (2.0 * s12 + SSIM_C2)
    den = (mu1 * mu1 + mu2 * mu2 + SSIM_C1) * (s11 + s22 + SSIM_C2)
    return num / den


def view_pair_quality(ref_img: ProjectedImage, deg_img: ProjectedImage, depth_range: float):
    """0.5 * masked SSIM + 0.5 * bounded depth PSNR for one aligned view pair.

    Returns None when neither image covers any pixel (view skipped).
    """
    union = ref_img.mask | deg_img.mask
    if not union.any():
        return None
    ssim_term = float(_ssim_map(_luminance(ref_img), _luminance(deg_img))[union].mean())

    inter = ref_img.mask & deg_img.mask
    if inter.any():
        diff = ref_img.depth[inter] - deg_img.depth[inter]
        mse = float(np.mean(diff * diff))
        floor = depth_range * depth_range * 1e-12
        psnr = 10.0 * math.log10(depth_range * depth_range / max(mse, floor))
        depth_term = min(max(psnr, 0.0), DEPTH_PSNR_CAP_DB) / DEPTH_PSNR_CAP_DB
    else:
        depth_term = 0.0
    return 0.5 * ssim_term + 0.5 * depth_term


def baseline_pcqa(
    reference: PointCloud,
    degraded: PointCloud,
    views,
    resolution: int = 256,
    splat_radius: int = 1,
) -> float:
    """Mean over views of the aligned projection quality; higher is better."""
    depth_range = summarize(reference).diagonal
    scores = []
    for view in views:
        q = view_pair_quality(
            render(reference, view, resolution, splat_radius),
            render(degraded, view, resolution, splat_radius),
            depth_range,
        )
        if q is not None:
            scores.append(q)
    if not scores:
        raise ValueError("every projection was empty")
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# strategy harnesses


@dataclass
class EvalSample:
    reference: PointCloud
    degraded: PointCloud
    mos: float


@dataclass
class EvalReport:
    plcc: float
    srcc: float
    krcc: float
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"plcc": self.plcc, "srcc": self.srcc, "krcc": self.krcc, "config": self.config}

    def table_row(self, label: str) -> str:
        return f"{label:<24} plcc={self.plcc:+.4f} srcc={self.srcc:+.4f} krcc={self.krcc:+.4f}"


def _reoriented_view(base: ViewSetup, position: np.ndarray) -> ViewSetup:
    """View at an arbitrary plane position, plane re-derived for its aim."""
    dvec = position - base.center
    d = dvec / np.linalg.norm(dvec)
    u, v = frame_for_direction(d, base.frame_u)
    return ViewSetup(
        viewpoint=position,
        center=base.center,
        direction=d,
        region_half_extent=base.region_half_extent,
        frame_u=u,
        frame_v=v,
        face_index=base.face_index,
    )


def _strategy_views(sample, mode, cavgn_model, margin, seed, stats_cache):
    from .viewgen import generate_for_view, multiscale_stats

    summary = summarize(sample.degraded)
    faces = default_viewpoints(summary, margin)
    if mode == "default":
        return faces
    if mode == "random":
        views = []
        for face in faces:
            rng = np.random.default_rng(
                derive_seed(seed, "eval-random", sample.degraded.id, face.face_index)
            )
            h = face.region_half_extent
            u, v = rng.uniform(-h, h, size=2)
            views.append(_reoriented_view(face, lift(face, u, v)))
        return views
    if mode == "generated":
        if cavgn_model is None:
            raise ValueError("generated mode needs a trained viewpoint generator")
        key = sample.degraded.id
        if key not in stats_cache:
            stats_cache[key] = multiscale_stats(
                sample.degraded, cavgn_model.config.tokens, cavgn_model.config
            )
        views = []
        for face in faces:
            vp = generate_for_view(cavgn_model, sample.degraded, face, stats=stats_cache[key])
            views.append(_reoriented_view(face, vp))
        return views
    raise ValueError(f"unknown viewpoint mode '{mode}'")


def _strategy_prediction(args) -> float:
    """Baseline score of one sample; module-level for process pools."""
    sample, views_mode, cavgn_model, resolution, splat_radius, margin, seed = args
    views = _strategy_views(sample, views_mode, cavgn_model, margin, seed, {})
    return baseline_pcqa(sample.reference, sample.degraded, views, resolution, splat_radius)


def compare_strategies(
    dataset: list[EvalSample],
    cavgn_model=None,
    views_mode: str = "default",
    resolution: int = 256,
    splat_radius: int = 1,
    margin: float = 1.25,
    seed: int = 0,
    workers: int = 1,
) -> EvalReport:
    """Score every sample under one viewpoint strategy and correlate with MOS.

    Samples fan out over `workers` processes; results are identical for any
    worker count because every draw is seeded by (cloud id, face).
    """
    from .pipeline import pmap

    tasks = [
        (sample, views_mode, cavgn_model, resolution, splat_radius, margin, seed)
        for sample in dataset
    ]
    preds = pmap(_strategy_prediction, tasks, workers)
    mos = [sample.mos for sample in dataset]
    cfg = {
        "viewpoint_strategy": views_mode,
        "metric": "baseline-ssim-depth",
        "resolution": resolution,
        "splat_radius": splat_radius,
        "margin": margin,
        "ssim_window": SSIM_WINDOW,
        "ssim_c1": SSIM_C1,
        "ssim_c2": SSIM_C2,
        "depth_psnr_cap_db": DEPTH_PSNR_CAP_DB,
        "seed": seed,
        "n": len(dataset),
    }
    return EvalReport(plcc(preds, mos), srcc(preds, mos), krcc(preds, mos), cfg)


def rank_sweep(
    dataset: list[EvalSample],
    model: ScoreModel,
    n_v: int = 9,
    resolution: int = 256,
    splat_radius: int = 1,
    margin: float = 1.25,
) -> list[EvalReport]:
    """Evaluate the baseline using, per face, the candidate at each quality
    rank (1 = model's best ... N_v = worst) and report one correlation per
    rank. Mirrors the worse-the-better harness.
    """
    per_rank_preds = [[] for _ in range(n_v)]
    mos = [s.mos for s in dataset]
    for sample in dataset:
        summary = summarize(sample.degraded)
        depth_range = summarize(sample.reference).diagonal
        faces = default_viewpoints(summary, margin)
        face_rankings = []
        deg_images = {}
        for face in faces:
            grid = sample_candidates(face, n_v)
            scored = []
            for j in range(n_v):
                cview = grid.candidate_view(j)
                img = render(sample.degraded, cview, resolution, splat_radius)
                try:
                    s = score(model, extract_features(img))
                except EmptyProjectionError:
                    continue
                deg_images[(face.face_index, j)] = (cview, img)
                scored.append((j, s))
            if not scored:
                continue
            by_quality = sorted(scored, key=lambda t: (-t[1], t[0]))  # best first
            face_rankings.append((face.face_index, by_quality))

        ref_images: dict = {}
        for rank in range(1, n_v + 1):
            vals = []
            for face_index, by_quality in face_rankings:
                j, _ = by_quality[min(rank, len(by_quality)) - 1]
                cview, deg_img = deg_images[(face_index, j)]
                if (face_index, j) not in ref_images:
                    ref_images[(face_index, j)] = render(
                        sample.reference, cview, resolution, splat_radius
                    )
                q = view_pair_quality(ref_images[(face_index, j)], deg_img, depth_range)
                if q is not None:
                    vals.append(q)
            if not vals:
                raise ValueError(f"no usable projections for {sample.degraded.id}")
            per_rank_preds[rank - 1].append(float(np.mean(vals)))

    reports = []
    for rank in range(1, n_v + 1):
        cfg = {
            "viewpoint_strategy": "rank-sweep",
            "quality_rank": rank,
            "n_v": n_v,
            "metric": "baseline-ssim-depth",
            "resolution": resolution,
            "splat_radius": splat_radius,
            "margin": margin,
            "n": len(dataset),
        }
        preds = per_rank_preds[rank - 1]
        reports.append(EvalReport(plcc(preds, mos), srcc(preds, mos), krcc(preds, mos), cfg))
    return reports


def worse_the_better(
    dataset: list[EvalSample],
    model: ScoreModel,
    quality_rank: int,
    n_v: int = 9,
    resolution: int = 256,
    splat_radius: int = 1,
    margin: float = 1.25,
) -> EvalReport:
    """Single-rank report from the rank sweep."""
    if not 1 <= quality_rank <= n_v:
        raise ValueError(f"quality_rank must be in 1..{n_v}")
    return rank_sweep(dataset, model, n_v, resolution, splat_radius, margin)[quality_rank - 1]
