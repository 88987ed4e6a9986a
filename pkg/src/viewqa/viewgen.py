"""Content-aware viewpoint generation.

Three-stage multi-scale neighborhood statistics with learnable residual
linear maps feed two branches (geometry, texture). Each branch embeds the
conditioning viewpoint, focuses tokens through per-token layers, and
refines them with single-head self-attention; the pooled fusion drives a
four-layer head that emits an in-plane offset, clamped to the projection
region, so generated viewpoints satisfy the region constraint structurally.
All gradients are analytic and checked against finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import nn
from .cloud import PointCloud, summarize
from .seeds import derive_seed
from .viewgeom import ViewSetup, lift, plane_coords, view_setup_for


@dataclass(frozen=True)
class CavgnConfig:
    tokens: int = 64
    embed_dim: int = 16
    hidden: int = 32
    geom_stats: int = 5
    tex_stats: int = 6
    head_widths: tuple = (64, 32, 16)
    radius_base: float = 0.02  # stage k ball radius = radius_base * 2^(k-1) * diagonal
    leaky_slope: float = 0.01

    def stat_width(self, channel: str) -> int:
        return self.geom_stats if channel == "geometry" else self.tex_stats

    def to_json(self) -> dict:
        return {
            "tokens": self.tokens, "embed_dim": self.embed_dim, "hidden": self.hidden,
            "geom_stats": self.geom_stats, "tex_stats": self.tex_stats,
            "head_widths": list(self.head_widths), "radius_base": self.radius_base,
            "leaky_slope": self.leaky_slope,
        }

    @staticmethod
    def from_json(obj: dict) -> "CavgnConfig":
        return CavgnConfig(
            tokens=int(obj["tokens"]), embed_dim=int(obj["embed_dim"]),
            hidden=int(obj["hidden"]), geom_stats=int(obj["geom_stats"]),
            tex_stats=int(obj["tex_stats"]), head_widths=tuple(obj["head_widths"]),
            radius_base=float(obj["radius_base"]), leaky_slope=float(obj["leaky_slope"]),
        )


@dataclass
class CavgnHyper:
    lr: float = 1e-5
    epochs: int = 30
    decay: float = 0.2
    decay_every: int = 2
    split: float = 0.8

    def to_json(self) -> dict:
        return {
            "lr": self.lr, "epochs": self.epochs, "decay": self.decay,
            "decay_every": self.decay_every, "split": self.split,
        }


@dataclass
class CavgnModel:
    config: CavgnConfig
    params: dict
    hyper: dict = field(default_factory=dict)
    seed: int = 0


@dataclass
class MultiScaleFeatures:
    """Per-token staged features with the pooled global vector expanded.

    f_c concatenates the three stage outputs per token; f_p is the max-pool
    over tokens; F appends a copy of f_p to every token row.
    """

    f_c: np.ndarray   # (K, 3S)
    f_p: np.ndarray   # (3S,)
    F: np.ndarray     # (K, 6S)
    token_count: int
    stage_widths: tuple


@dataclass
class ConstrainedFeatures:
    """Viewpoint-conditioned branch tokens and their pooled fusion."""

    tokens_geometry: np.ndarray  # (K, hidden)
    tokens_texture: np.ndarray   # (K, hidden)
    fused: np.ndarray            # (2*hidden,)
    view: ViewSetup


def init_cavgn_model(
    seed: int, config: CavgnConfig | None = None, zero_head: bool = True
) -> CavgnModel:
    """Seeded init. zero_head zeroes the final head layer so a fresh model
    returns the default viewpoint exactly."""
    config = config or CavgnConfig()
    rng = np.random.default_rng(seed)
    p: dict = {}
    for prefix, s in (("g", config.geom_stats), ("t", config.tex_stats)):
        p[f"{prefix}.A1"], p[f"{prefix}.c1"] = nn.init_linear(rng, s, s)
        p[f"{prefix}.A2"], p[f"{prefix}.c2"] = nn.init_linear(rng, s, s)
        p[f"{prefix}.We"], p[f"{prefix}.be"] = nn.init_linear(rng, 6, config.embed_dim)
        in_w = 6 * s + config.embed_dim
        p[f"{prefix}.W1"], p[f"{prefix}.b1"] = nn.init_linear(rng, in_w, config.hidden, np.sqrt(2))
        p[f"{prefix}.W2"], p[f"{prefix}.b2"] = nn.init_linear(rng, config.hidden, config.hidden, np.sqrt(2))
        p[f"{prefix}.W3"], p[f"{prefix}.b3"] = nn.init_linear(rng, config.hidden, config.hidden, np.sqrt(2))
        p[f"{prefix}.Wq"], _ = nn.init_linear(rng, config.hidden, config.hidden)
        p[f"{prefix}.Wk"], _ = nn.init_linear(rng, config.hidden, config.hidden)
        p[f"{prefix}.Wv"], _ = nn.init_linear(rng, config.hidden, config.hidden)
    widths = (2 * config.hidden,) + tuple(config.head_widths) + (2,)
    for i in range(len(widths) - 1):
        w, b = nn.init_linear(rng, widths[i], widths[i + 1], np.sqrt(2))
        if zero_head and i == len(widths) - 2:
            w = np.zeros_like(w)
        p[f"head.H{i + 1}"], p[f"head.c{i + 1}"] = w, b
    return CavgnModel(config=config, params=p, seed=seed)


# ---------------------------------------------------------------------------
# fixed multi-scale neighborhood statistics


def farthest_point_indices(points: np.ndarray, k: int) -> np.ndarray:
    """Deterministic farthest-point sampling seeded at index 0; ties take
    the lowest index."""
    n = points.shape[0]
    if k > n:
        raise ValueError(f"requested {k} tokens from {n} points")
    idx = np.empty(k, dtype=np.int64)
    idx[0] = 0
    dist = np.linalg.norm(points - points[0], axis=1)
    for i in range(1, k):
        j = int(np.argmax(dist))
        idx[i] = j
        dist = np.minimum(dist, np.linalg.norm(points - points[j], axis=1))
    return idx


def multiscale_stats(cloud: PointCloud, k: int, config: CavgnConfig | None = None) -> dict:
    """Raw per-token stats for all three stages and both channels.

    Stage radii are radius_base * 2^(stage-1) * bbox diagonal. Neighborhoods
    exclude the token point itself; empty neighborhoods yield zero stats.
    Geometry stats: [log-scaled neighbor count, centroid offset / radius,
    three covariance eigenvalue fractions]. Texture stats: mean and std per
    color channel over the neighborhood.
    """
    config = config or CavgnConfig()
    pts = cloud.points
    cols = cloud.colors.astype(np.float64) / 255.0
    diag = summarize(cloud).diagonal
    tokens = farthest_point_indices(pts, k)
    tree = cKDTree(pts)
    out = {"tokens": tokens, "geometry": [], "texture": []}
    for stage in range(3):
        radius = config.radius_base * (2.0 ** stage) * diag
        geo = np.zeros((k, config.geom_stats))
        tex = np.zeros((k, config.tex_stats))
        if radius > 0.0:
            neighborhoods = tree.query_ball_point(pts[tokens], radius)
        else:
            neighborhoods = [[] for _ in range(k)]
        for t, nbrs in enumerate(neighborhoods):
            ti = tokens[t]
            nbrs = [j for j in nbrs if j != ti]
            if not nbrs:
                continue
            npts = pts[nbrs]
            geo[t, 0] = math.log1p(len(nbrs)) / 10.0
            geo[t, 1] = np.linalg.norm(npts.mean(axis=0) - pts[ti]) / radius
            if len(nbrs) >= 3:
                cov = np.cov(npts, rowvar=False)
                eig = np.linalg.eigvalsh(cov)
                tot = eig.sum()
                if tot > 0:
                    geo[t, 2:5] = eig / tot
            ncols = cols[nbrs]
            tex[t, 0:3] = ncols.mean(axis=0)
            tex[t, 3:6] = ncols.std(axis=0)
        out["geometry"].append(geo)
        out["texture"].append(tex)
    return out


# ---------------------------------------------------------------------------
# forward pieces


def view_encoding(view: ViewSetup) -> np.ndarray:
    """6-vector conditioning: unit direction, in-plane (u,v)/h, face/5."""
    u, v = plane_coords(view, view.viewpoint)
    h = view.region_half_extent
    return np.array(
        [view.direction[0], view.direction[1], view.direction[2],
         u / h, v / h, view.face_index / 5.0]
    )


def _stage_forward(params: dict, prefix: str, stats: list):
    s1, s2, s3 = stats
    f1 = s1
    f2 = s2 + f1 @ params[f"{prefix}.A1"] + params[f"{prefix}.c1"]
    f3 = s3 + f2 @ params[f"{prefix}.A2"] + params[f"{prefix}.c2"]
    fc = np.concatenate([f1, f2, f3], axis=1)
    fp = fc.max(axis=0)
    am = fc.argmax(axis=0)  # first max per column, for backward
    F = np.concatenate([fc, np.tile(fp, (fc.shape[0], 1))], axis=1)
    return F, (f1, f2, f3, fc, fp, am)


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _focus_attend(params: dict, prefix: str, F: np.ndarray, enc: np.ndarray, slope: float):
    k = F.shape[0]
    pre_e = enc @ params[f"{prefix}.We"] + params[f"{prefix}.be"]
    e = nn.leaky_relu(pre_e, slope)
    x0 = np.concatenate([F, np.tile(e, (k, 1))], axis=1)
    pre1 = x0 @ params[f"{prefix}.W1"] + params[f"{prefix}.b1"]
    x1 = nn.leaky_relu(pre1, slope)
    pre2 = x1 @ params[f"{prefix}.W2"] + params[f"{prefix}.b2"]
    x2 = nn.leaky_relu(pre2, slope)
    pre3 = x2 @ params[f"{prefix}.W3"] + params[f"{prefix}.b3"]
    x3 = nn.leaky_relu(pre3, slope)
    q = x3 @ params[f"{prefix}.Wq"]
    kk = x3 @ params[f"{prefix}.Wk"]
    v = x3 @ params[f"{prefix}.Wv"]
    scale = 1.0 / math.sqrt(q.shape[1])
    logits = (q @ kk.T) * scale
    attn = _softmax_rows(logits)
    y = x3 + attn @ v
    cache = (pre_e, e, x0, pre1, x1, pre2, x2, pre3, x3, q, kk, v, attn, scale)
    return y, cache


def _head_forward(params: dict, fi: np.ndarray):
    n_layers = max(int(k[6:]) for k in params if k.startswith("head.H"))
    acts = [fi]
    pres = []
    x = fi
    for i in range(1, n_layers + 1):
        pre = x @ params[f"head.H{i}"] + params[f"head.c{i}"]
        pres.append(pre)
        x = nn.relu(pre) if i < n_layers else pre
        acts.append(x)
    return x, (acts, pres, n_layers)


def extract_multiscale(
    model: CavgnModel, cloud: PointCloud, channel: str, k: int | None = None,
    stats: dict | None = None,
) -> MultiScaleFeatures:
    """Staged features with residual linear combination, pooled and expanded.

    `stats` may carry precomputed multiscale_stats for the same cloud/K.
    """
    if channel not in ("geometry", "texture"):
        raise ValueError(f"channel must be geometry or texture, got '{channel}'")
    k = k or model.config.tokens
    if stats is None:
        stats = multiscale_stats(cloud, k, model.config)
    prefix = "g" if channel == "geometry" else "t"
    F, (f1, f2, f3, fc, fp, _) = _stage_forward(model.params, prefix, stats[channel])
    s = model.config.stat_width(channel)
    return MultiScaleFeatures(f_c=fc, f_p=fp, F=F, token_count=k, stage_widths=(s, s, s))


def constrain(
    model: CavgnModel, feats_g: MultiScaleFeatures, feats_t: MultiScaleFeatures,
    view: ViewSetup,
) -> ConstrainedFeatures:
    """Refine both branches toward the view's visible content and fuse."""
    if feats_g.token_count != feats_t.token_count:
        raise ValueError("geometry/texture token counts differ")
    enc = view_encoding(view)
    slope = model.config.leaky_slope
    yg, _ = _focus_attend(model.params, "g", feats_g.F, enc, slope)
    yt, _ = _focus_attend(model.params, "t", feats_t.F, enc, slope)
    fused = np.concatenate([yg, yt], axis=1).mean(axis=0)
    return ConstrainedFeatures(tokens_geometry=yg, tokens_texture=yt, fused=fused, view=view)


def generate_viewpoint(model: CavgnModel, fused: np.ndarray, view: ViewSetup) -> np.ndarray:
    """Head output (u, v) clamped to the region square, lifted to 3D.

    The returned point always lies on the view's region plane.
    """
    uv_raw, _ = _head_forward(model.params, np.asarray(fused, dtype=np.float64))
    h = view.region_half_extent
    uv = np.clip(uv_raw, -h, h)
    return lift(view, float(uv[0]), float(uv[1]))


def generate_for_view(
    model: CavgnModel, cloud: PointCloud, view: ViewSetup, stats: dict | None = None
) -> np.ndarray:
    """Convenience end-to-end generation for one cloud and one default view."""
    fg = extract_multiscale(model, cloud, "geometry", stats=stats)
    ft = extract_multiscale(model, cloud, "texture", stats=stats)
    cf = constrain(model, fg, ft, view)
    return generate_viewpoint(model, cf.fused, view)


# ---------------------------------------------------------------------------
# loss


def angle_loss(v_o, v_hat, c) -> float:
    """1 - cos of the angle between (v_o - c) and (v_hat - c); range [0, 2]."""
    a = np.asarray(v_o, dtype=np.float64) - np.asarray(c, dtype=np.float64)
    b = np.asarray(v_hat, dtype=np.float64) - np.asarray(c, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("zero-length direction in angle loss")
    return float(1.0 - (a @ b) / (na * nb))


def _angle_loss_grad(v_o, v_hat, c):
    a = np.asarray(v_o, dtype=np.float64) - np.asarray(c, dtype=np.float64)
    b = np.asarray(v_hat, dtype=np.float64) - np.asarray(c, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("zero-length direction in angle loss")
    loss = 1.0 - (a @ b) / (na * nb)
    grad_b = -a / (na * nb) + (a @ b) * b / (na * nb ** 3)
    return float(loss), grad_b


# ---------------------------------------------------------------------------
# full objective with analytic backward


@dataclass
class TrainSample:
    """One DOV row prepared for the training loop."""

    stats_g: list
    stats_t: list
    enc: np.ndarray
    view: ViewSetup
    target: np.ndarray
    center: np.ndarray
    tag: str = ""


def _branch_backward(params, prefix, enc, stage_cache, focus_cache, dY, slope, grads):
    pre_e, e, x0, pre1, x1, pre2, x2, pre3, x3, q, kk, v, attn, scale = focus_cache
    f1, f2, f3, fc, fp, am = stage_cache

    # attention with residual: y = x3 + attn @ v
    dx3 = dY.copy()
    dattn = dY @ v.T
    dv = attn.T @ dY
    dlogits = attn * (dattn - (dattn * attn).sum(axis=1, keepdims=True))
    dq = dlogits @ kk * scale
    dkk = dlogits.T @ q * scale
    grads[f"{prefix}.Wq"] += x3.T @ dq
    grads[f"{prefix}.Wk"] += x3.T @ dkk
    grads[f"{prefix}.Wv"] += x3.T @ dv
    dx3 += dq @ params[f"{prefix}.Wq"].T
    dx3 += dkk @ params[f"{prefix}.Wk"].T
    dx3 += dv @ params[f"{prefix}.Wv"].T

    dpre3 = dx3 * nn.dleaky_relu(pre3, slope)
    grads[f"{prefix}.W3"] += x2.T @ dpre3
    grads[f"{prefix}.b3"] += dpre3.sum(axis=0)
    dx2 = dpre3 @ params[f"{prefix}.W3"].T
    dpre2 = dx2 * nn.dleaky_relu(pre2, slope)
    grads[f"{prefix}.W2"] += x1.T @ dpre2
    grads[f"{prefix}.b2"] += dpre2.sum(axis=0)
    dx1 = dpre2 @ params[f"{prefix}.W2"].T
    dpre1 = dx1 * nn.dleaky_relu(pre1, slope)
    grads[f"{prefix}.W1"] += x0.T @ dpre1
    grads[f"{prefix}.b1"] += dpre1.sum(axis=0)
    dx0 = dpre1 @ params[f"{prefix}.W1"].T

    w_f = fc.shape[1] * 2
    dF = dx0[:, :w_f]
    de = dx0[:, w_f:].sum(axis=0)
    dpre_e = de * nn.dleaky_relu(pre_e, slope)
    grads[f"{prefix}.We"] += np.outer(enc, dpre_e)
    grads[f"{prefix}.be"] += dpre_e

    w_c = fc.shape[1]
    dfc = dF[:, :w_c].copy()
    dfp = dF[:, w_c:].sum(axis=0)
    dfc[am, np.arange(w_c)] += dfp  # max-pool routes to the first argmax row

    s = f1.shape[1]
    df1 = dfc[:, :s]
    df2 = dfc[:, s:2 * s].copy()
    df3 = dfc[:, 2 * s:]
    grads[f"{prefix}.A2"] += f2.T @ df3
    grads[f"{prefix}.c2"] += df3.sum(axis=0)
    df2 += df3 @ params[f"{prefix}.A2"].T
    grads[f"{prefix}.A1"] += f1.T @ df2
    grads[f"{prefix}.c1"] += df2.sum(axis=0)


def cavgn_objective(model: CavgnModel, samples: list[TrainSample]):
    """Mean angle loss over samples plus analytic gradients for all params."""
    params = model.params
    slope = model.config.leaky_slope
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    total = 0.0
    n = len(samples)
    for smp in samples:
        Fg, cache_sg = _stage_forward(params, "g", smp.stats_g)
        Ft, cache_st = _stage_forward(params, "t", smp.stats_t)
        yg, cache_fg = _focus_attend(params, "g", Fg, smp.enc, slope)
        yt, cache_ft = _focus_attend(params, "t", Ft, smp.enc, slope)
        k = yg.shape[0]
        fused = np.concatenate([yg, yt], axis=1).mean(axis=0)
        uv_raw, (acts, pres, n_layers) = _head_forward(params, fused)
        h = smp.view.region_half_extent
        uv = np.clip(uv_raw, -h, h)
        v_hat = lift(smp.view, float(uv[0]), float(uv[1]))
        loss, grad_b = _angle_loss_grad(smp.target, v_hat, smp.center)
        total += loss

        duv = np.array([grad_b @ smp.view.frame_u, grad_b @ smp.view.frame_v]) / n
        duv_raw = np.where((uv_raw > -h) & (uv_raw < h), duv, 0.0)

        dx = duv_raw
        for i in range(n_layers, 0, -1):
            dpre = dx if i == n_layers else dx * nn.drelu(pres[i - 1])
            grads[f"head.H{i}"] += np.outer(acts[i - 1], dpre)
            grads[f"head.c{i}"] += dpre
            dx = params[f"head.H{i}"] @ dpre

        dz = np.tile(dx / k, (k, 1))
        hw = yg.shape[1]
        _branch_backward(params, "g", smp.enc, cache_sg, cache_fg, dz[:, :hw], slope, grads)
        _branch_backward(params, "t", smp.enc, cache_st, cache_ft, dz[:, hw:], slope, grads)

    return total / n, grads


# ---------------------------------------------------------------------------
# training


def prepare_samples(records, cloud_lookup, config: CavgnConfig, margin: float = 1.25):
    """Turn DOV records into TrainSamples, caching stats per cloud id."""
    stats_cache: dict = {}
    samples = []
    for rec in records:
        cloud = cloud_lookup(rec.cloud_id)
        if cloud.id not in stats_cache:
            stats_cache[cloud.id] = multiscale_stats(cloud, config.tokens, config)
        stats = stats_cache[cloud.id]
        summary = summarize(cloud)
        view = view_setup_for(summary, rec.default_viewpoint, rec.face_index, margin)
        samples.append(
            TrainSample(
                stats_g=stats["geometry"],
                stats_t=stats["texture"],
                enc=view_encoding(view),
                view=view,
                target=rec.optimized_viewpoint,
                center=summary.centroid,
                tag=f"{rec.cloud_id}/f{rec.face_index}",
            )
        )
    return samples


def train_cavgn(
    records,
    cloud_lookup,
    hp: CavgnHyper | None = None,
    config: CavgnConfig | None = None,
    margin: float = 1.25,
    seed: int = 0,
):
    """Train the generator on DOV records; batch size 1, deterministic.

    cloud_lookup maps a record's cloud_id to its PointCloud. Returns the
    model and per-epoch train/validation mean angle loss.
    """
    if len(records) < 2:
        raise ValueError("need at least 2 DOV records to train")
    hp = hp or CavgnHyper()
    config = config or CavgnConfig()

    samples = prepare_samples(records, cloud_lookup, config, margin)
    rng_split = np.random.default_rng(derive_seed(seed, "cavgn", "split"))
    order = rng_split.permutation(len(samples))
    n_train = max(1, min(int(round(hp.split * len(samples))), len(samples) - 1))
    train = [samples[i] for i in order[:n_train]]
    val = [samples[i] for i in order[n_train:]]

    model = init_cavgn_model(derive_seed(seed, "cavgn", "init"), config)
    model.hyper = hp.to_json()
    model.seed = seed
    opt = nn.Adam(model.params)
    rng_epoch = np.random.default_rng(derive_seed(seed, "cavgn", "epochs"))
    history = {"train_loss": [], "val_loss": []}

    for epoch in range(hp.epochs):
        lr = nn.stepped_lr(hp.lr, epoch, hp.decay, hp.decay_every)
        for i in rng_epoch.permutation(n_train):
            loss, grads = cavgn_objective(model, [train[i]])
            if not math.isfinite(loss):
                raise RuntimeError(f"non-finite loss on record {train[i].tag}")
            opt.step(model.params, grads, lr)
        history["train_loss"].append(mean_angle_loss(model, train))
        history["val_loss"].append(mean_angle_loss(model, val))
    return model, history


def mean_angle_loss(model: CavgnModel, samples: list[TrainSample]) -> float:
    if not samples:
        return float("nan")
    total = 0.0
    for smp in samples:
        Fg, _ = _stage_forward(model.params, "g", smp.stats_g)
        Ft, _ = _stage_forward(model.params, "t", smp.stats_t)
        yg, _ = _focus_attend(model.params, "g", Fg, smp.enc, model.config.leaky_slope)
        yt, _ = _focus_attend(model.params, "t", Ft, smp.enc, model.config.leaky_slope)
        fused = np.concatenate([yg, yt], axis=1).mean(axis=0)
        v_hat = generate_viewpoint(model, fused, smp.view)
        total += angle_loss(smp.target, v_hat, smp.center)
    return total / len(samples)


# ---------------------------------------------------------------------------
# serialization


def save_cavgn_model(model: CavgnModel, path) -> None:
    nn.dump_json(
        {
            "kind": "cavgn-viewgen",
            "config": model.config.to_json(),
            "params": nn.params_to_jsonable(model.params),
            "hyper": model.hyper,
            "seed": model.seed,
        },
        path,
    )


def load_cavgn_model(path) -> CavgnModel:
    obj = nn.read_json(path)
    if obj.get("kind") != "cavgn-viewgen":
        raise ValueError(f"not a viewpoint generator file: {path}")
    return CavgnModel(
        config=CavgnConfig.from_json(obj["config"]),
        params=nn.params_from_jsonable(obj["params"]),
        hyper=obj.get("hyper", {}),
        seed=int(obj.get("seed", 0)),
    )
