"""Self-supervised viewpoint ranking.

A shared-parameter scoring MLP over handcrafted projection features, a
pairwise sigmoid rank head, and the self-supervised pair generator that
labels image pairs of the same content and viewpoint by distortion level.
Pair combinatorics per cloud: N viewpoints x T kinds x C(L+1, 2) level
pairs, the reference counting as level 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import nn
from .cloud import PointCloud
from .distort import DistortionLadder
from .projector import ProjectedImage, render
from .seeds import derive_seed
from .viewgeom import ViewSetup

FEATURE_DIM = 24


class EmptyProjectionError(ValueError):
    pass


def _masked_central_gradients(field: np.ndarray, mask: np.ndarray):
    """Central differences using only neighbors that are covered.

    The gradient at a covered pixel is (right - left)/2 when both horizontal
    neighbors are covered, else 0; same vertically. Out-of-canvas counts as
    uncovered, so padding an image with background never changes results.
    """
    gx = np.zeros_like(field)
    gy = np.zeros_like(field)
    okx = mask[:, :-2] & mask[:, 2:]
    gx[:, 1:-1][okx] = (field[:, 2:][okx] - field[:, :-2][okx]) / 2.0
    oky = mask[:-2, :] & mask[2:, :]
    gy[1:-1, :][oky] = (field[2:, :][oky] - field[:-2, :][oky]) / 2.0
    return gx, gy


def extract_features(img: ProjectedImage) -> np.ndarray:
    """24-dim feature vector over covered pixels only.

    Layout: [0:3] channel means, [3:6] channel stds, [6:9] gradient
    magnitude means per channel, [9:12] gradient magnitude stds,
    [12:15] depth mean/std/range, [15] coverage ratio (covered pixels over
    the area of their tight bounding box), [16:24] 8-bin luminance
    gradient-orientation histogram normalized by covered count.
    """
    mask = img.mask
    n_cov = int(mask.sum())
    if n_cov == 0:
        raise EmptyProjectionError("empty projection")
    rgb = img.color.astype(np.float64) / 255.0
    feats = np.empty(FEATURE_DIM)

    for c in range(3):
        vals = rgb[:, :, c][mask]
        feats[c] = vals.mean()
        feats[3 + c] = vals.std()

    for c in range(3):
        gx, gy = _masked_central_gradients(rgb[:, :, c], mask)
        gmag = np.hypot(gx, gy)[mask]
        feats[6 + c] = gmag.mean()
        feats[9 + c] = gmag.std()

    depth = img.depth[mask]
    feats[12] = depth.mean()
    feats[13] = depth.std()
    feats[14] = depth.max() - depth.min()

    ys, xs = np.nonzero(mask)
    area = (ys.max() - ys.min() + 1) * (xs.max() - xs.min() + 1)
    feats[15] = n_cov / area

    lum = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
    gx, gy = _masked_central_gradients(lum, mask)
    gmag = np.hypot(gx, gy)
    sel = mask & (gmag > 0.0)
    hist = np.zeros(8)
    if sel.any():
        theta = np.arctan2(gy[sel], gx[sel])
        bins = np.clip(np.floor((theta + np.pi) / (2.0 * np.pi) * 8.0), 0, 7).astype(int)
        np.add.at(hist, bins, 1.0)
        hist /= n_cov
    feats[16:24] = hist

    if not np.all(np.isfinite(feats)):
        raise ValueError("non-finite image features")
    return feats


# ---------------------------------------------------------------------------
# scoring model


@dataclass
class SsvrnHyper:
    lr: float = 1e-4
    epochs: int = 100
    decay: float = 0.9
    decay_every: int = 10
    batch_size: int = 64
    split: float = 0.8

    def to_json(self) -> dict:
        return {
            "lr": self.lr, "epochs": self.epochs, "decay": self.decay,
            "decay_every": self.decay_every, "batch_size": self.batch_size,
            "split": self.split,
        }


@dataclass
class ScoreModel:
    """MLP D->32->16->1, rectifier hidden units, sigmoid output in (0,1).

    Both images of a pair are scored by the same parameters. Features are
    standardized with constants frozen from the training split.
    """

    weights: dict
    feat_mean: np.ndarray
    feat_scale: np.ndarray
    hyper: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights["W1"].shape[0],
                self.weights["W1"].shape[1],
                self.weights["W2"].shape[1],
                self.weights["W3"].shape[1]]


def init_score_model(seed: int, dim: int = FEATURE_DIM, hidden=(32, 16)) -> ScoreModel:
    rng = np.random.default_rng(seed)
    w1, b1 = nn.init_linear(rng, dim, hidden[0], gain=np.sqrt(2.0))
    w2, b2 = nn.init_linear(rng, hidden[0], hidden[1], gain=np.sqrt(2.0))
    w3, b3 = nn.init_linear(rng, hidden[1], 1)
    weights = {"W1": w1, "b1": b1, "W2": w2, "b2": b2, "W3": w3, "b3": b3}
    return ScoreModel(weights, np.zeros(dim), np.ones(dim), seed=seed)


def _forward(model: ScoreModel, X: np.ndarray):
    """Batched forward pass; returns scores (n,) and the cache for backward."""
    xh = (X - model.feat_mean) / model.feat_scale
    w = model.weights
    z1 = xh @ w["W1"] + w["b1"]
    a1 = nn.relu(z1)
    z2 = a1 @ w["W2"] + w["b2"]
    a2 = nn.relu(z2)
    z3 = (a2 @ w["W3"] + w["b3"]).ravel()
    s = nn.sigmoid(z3)
    return s, (xh, z1, a1, z2, a2, z3)


def score(model: ScoreModel, feats: np.ndarray) -> float:
    """Quality score in (0,1); higher means better predicted quality."""
    s, _ = _forward(model, np.asarray(feats, dtype=np.float64)[None, :])
    return float(s[0])


def score_batch(model: ScoreModel, X: np.ndarray) -> np.ndarray:
    s, _ = _forward(model, np.asarray(X, dtype=np.float64))
    return s


def rank_probability(s_a: float, s_b: float) -> float:
    """Probability that image a outranks image b: sigmoid(s_a - s_b)."""
    d = float(s_a) - float(s_b)
    if not math.isfinite(d):
        raise ValueError("non-finite scores")
    if d >= 0:
        return 1.0 / (1.0 + math.exp(-d))
    e = math.exp(d)
    return e / (1.0 + e)


def pair_loss(p_ab: float, label: float) -> float:
    """Cross entropy between the rank probability and the pair label."""
    eps = 1e-12
    p = min(max(p_ab, eps), 1.0 - eps)
    return -label * math.log(p) - (1.0 - label) * math.log(1.0 - p)


def _branch_backward(model: ScoreModel, cache, dz3: np.ndarray, grads: dict) -> None:
    xh, z1, a1, z2, a2, _ = cache
    w = model.weights
    dz3 = dz3[:, None]
    grads["W3"] += a2.T @ dz3
    grads["b3"] += dz3.sum(axis=0)
    da2 = dz3 @ w["W3"].T
    dz2 = da2 * nn.drelu(z2)
    grads["W2"] += a1.T @ dz2
    grads["b2"] += dz2.sum(axis=0)
    da1 = dz2 @ w["W2"].T
    dz1 = da1 * nn.drelu(z1)
    grads["W1"] += xh.T @ dz1
    grads["b1"] += dz1.sum(axis=0)


def pair_objective(model: ScoreModel, Xa: np.ndarray, Xb: np.ndarray, y: np.ndarray):
    """Mean pairwise cross entropy and its analytic parameter gradients."""
    sa, ca = _forward(model, Xa)
    sb, cb = _forward(model, Xb)
    n = Xa.shape[0]
    d = sa - sb
    p = nn.sigmoid(d)
    eps = 1e-12
    pc = np.clip(p, eps, 1.0 - eps)
    loss = float(np.mean(-y * np.log(pc) - (1.0 - y) * np.log(1.0 - pc)))

    dd = (p - y) / n
    dza = dd * sa * (1.0 - sa)
    dzb = -dd * sb * (1.0 - sb)
    grads = {k: np.zeros_like(v) for k, v in model.weights.items()}
    _branch_backward(model, ca, dza, grads)
    _branch_backward(model, cb, dzb, grads)
    return loss, grads


# ---------------------------------------------------------------------------
# pair generation


@dataclass
class RankPair:
    """Two projections of the same content and viewpoint at two levels.

    Level 0 denotes the reference; label is 1 iff side a has the strictly
    lower level (the better image). candidate_index -1 means the default
    viewpoint itself rather than a grid candidate.
    """

    cloud_id: str
    kind: str
    level_a: int
    level_b: int
    face: int
    candidate_index: int
    label: int
    feats_a: np.ndarray | None = None
    feats_b: np.ndarray | None = None

    def provenance_json(self) -> dict:
        return {
            "cloud_id": self.cloud_id, "kind": self.kind,
            "level_a": self.level_a, "level_b": self.level_b,
            "face": self.face, "candidate_index": self.candidate_index,
            "label": self.label,
        }


def count_pairs(n_views: int, n_kinds: int, n_levels: int) -> int:
    """N x T x C(L+1, 2) pair count for one cloud."""
    return n_views * n_kinds * math.comb(n_levels + 1, 2)


def view_refs_from_grids(grids) -> list[tuple[int, int, ViewSetup]]:
    """(face, candidate_index, view) triplets for every grid candidate."""
    refs = []
    for grid in grids:
        for j in range(grid.n_v):
            refs.append((grid.base.face_index, j, grid.candidate_view(j)))
    return refs


def view_refs_from_views(views) -> list[tuple[int, int, ViewSetup]]:
    """Default viewpoints themselves, candidate_index -1."""
    return [(v.face_index, -1, v) for v in views]


def generate_pairs(ladder: DistortionLadder, view_refs, seed: int = 0) -> list[RankPair]:
    """Enumerate every (viewpoint, kind, unordered level pair) combination.

    Orientation of each pair is randomized by the seed so a learner cannot
    exploit slot position; the label is set to match the orientation.
    """
    rng = np.random.default_rng(derive_seed(seed, "pairs", ladder.reference.id))
    levels = list(range(0, ladder.L + 1))
    pairs = []
    for face, cand, _view in view_refs:
        for kind in ladder.kinds:
            for la, lb in combinations(levels, 2):
                a, b, label = la, lb, 1
                if rng.random() < 0.5:
                    a, b, label = lb, la, 0
                pairs.append(
                    RankPair(
                        cloud_id=ladder.reference.id,
                        kind=kind.value,
                        level_a=a,
                        level_b=b,
                        face=face,
                        candidate_index=cand,
                        label=label,
                    )
                )
    return pairs


class FeatureStore:
    """Render-and-extract cache keyed by (cloud key, face, candidate index).

    Avoids re-rendering identical projections across pair sides and epochs.
    """

    def __init__(self, resolution: int = 256, splat_radius: int = 1):
        self.resolution = resolution
        self.splat_radius = splat_radius
        self._cache: dict = {}

    def features(self, key, cloud: PointCloud, view: ViewSetup) -> np.ndarray:
        if key not in self._cache:
            img = render(cloud, view, self.resolution, self.splat_radius)
            self._cache[key] = extract_features(img)
        return self._cache[key]

    def __len__(self) -> int:
        return len(self._cache)


def materialize_pairs(
    ladder: DistortionLadder, view_refs, pairs: list[RankPair], store: FeatureStore
) -> list[RankPair]:
    """Fill feats_a/feats_b for every pair by rendering through the store."""
    by_level = {(spec.kind.value, spec.level): c for spec, c in ladder.variants}
    views = {(face, cand): view for face, cand, view in view_refs}

    def cloud_at(kind: str, level: int) -> PointCloud:
        return ladder.reference if level == 0 else by_level[(kind, level)]

    for pair in pairs:
        view = views[(pair.face, pair.candidate_index)]
        ka = (ladder.reference.id, pair.kind, pair.level_a, pair.face, pair.candidate_index)
        kb = (ladder.reference.id, pair.kind, pair.level_b, pair.face, pair.candidate_index)
        pair.feats_a = store.features(ka, cloud_at(pair.kind, pair.level_a), view)
        pair.feats_b = store.features(kb, cloud_at(pair.kind, pair.level_b), view)
    return pairs


# ---------------------------------------------------------------------------
# training


def _stack_pairs(pairs):
    Xa = np.stack([p.feats_a for p in pairs])
    Xb = np.stack([p.feats_b for p in pairs])
    y = np.array([p.label for p in pairs], dtype=np.float64)
    return Xa, Xb, y


def _accuracy_from_scores(sa: np.ndarray, sb: np.ndarray, y: np.ndarray) -> float:
    correct = ((sa > sb) & (y == 1.0)) | ((sa < sb) & (y == 0.0))
    return float(correct.mean())


def train_ssvrn(
    pairs: list[RankPair],
    split: float = 0.8,
    hp: SsvrnHyper | None = None,
    seed: int = 0,
):
    """Train the rank scorer on materialized pairs; deterministic given seed.

    Returns the final model and a history dict with per-epoch train/val
    loss and ranking accuracy.
    """
    if len(pairs) < 2:
        raise ValueError("need at least 2 pairs to train")
    if not 0.0 < split < 1.0:
        raise ValueError("split must be in (0, 1)")
    if any(p.feats_a is None or p.feats_b is None for p in pairs):
        raise ValueError("pairs must be materialized with features first")
    hp = hp or SsvrnHyper()

    rng_split = np.random.default_rng(derive_seed(seed, "ssvrn", "split"))
    order = rng_split.permutation(len(pairs))
    n_train = max(1, int(round(split * len(pairs))))
    n_train = min(n_train, len(pairs) - 1)
    train = [pairs[i] for i in order[:n_train]]
    val = [pairs[i] for i in order[n_train:]]

    Xa, Xb, y = _stack_pairs(train)
    Va, Vb, vy = _stack_pairs(val)

    model = init_score_model(derive_seed(seed, "ssvrn", "init"))
    both = np.concatenate([Xa, Xb], axis=0)
    model.feat_mean = both.mean(axis=0)
    model.feat_scale = np.maximum(both.std(axis=0), 1e-8)
    model.hyper = hp.to_json()
    model.seed = seed

    opt = nn.Adam(model.weights)
    rng_batch = np.random.default_rng(derive_seed(seed, "ssvrn", "batches"))
    history = {"train_loss": [], "val_loss": [], "train_acc": [], "val_acc": []}
    bs = max(1, min(hp.batch_size, n_train))

    for epoch in range(hp.epochs):
        lr = nn.stepped_lr(hp.lr, epoch, hp.decay, hp.decay_every)
        perm = rng_batch.permutation(n_train)
        for start in range(0, n_train, bs):
            sel = perm[start:start + bs]
            loss, grads = pair_objective(model, Xa[sel], Xb[sel], y[sel])
            if not math.isfinite(loss):
                raise RuntimeError(f"non-finite training loss at epoch {epoch}")
            opt.step(model.weights, grads, lr)

        tr_loss, _ = pair_objective(model, Xa, Xb, y)
        sa, sb = score_batch(model, Xa), score_batch(model, Xb)
        history["train_loss"].append(tr_loss)
        history["train_acc"].append(_accuracy_from_scores(sa, sb, y))
        vl_loss, _ = pair_objective(model, Va, Vb, vy)
        va, vb = score_batch(model, Va), score_batch(model, Vb)
        history["val_loss"].append(vl_loss)
        history["val_acc"].append(_accuracy_from_scores(va, vb, vy))

    return model, history


def ranking_accuracy(model: ScoreModel, pairs: list[RankPair]) -> float:
    """Fraction of pairs ranked correctly; equal scores count as incorrect."""
    if not pairs:
        raise ValueError("no pairs")
    Xa, Xb, y = _stack_pairs(pairs)
    return _accuracy_from_scores(score_batch(model, Xa), score_batch(model, Xb), y)


# ---------------------------------------------------------------------------
# serialization


def save_score_model(model: ScoreModel, path) -> None:
    nn.dump_json(
        {
            "kind": "ssvrn-score-mlp",
            "layer_sizes": model.layer_sizes,
            "weights": nn.params_to_jsonable(model.weights),
            "feature_mean": model.feat_mean.tolist(),
            "feature_scale": model.feat_scale.tolist(),
            "hyper": model.hyper,
            "seed": model.seed,
        },
        path,
    )


def load_score_model(path) -> ScoreModel:
    obj = nn.read_json(path)
    if obj.get("kind") != "ssvrn-score-mlp":
        raise ValueError(f"not a score model file: {path}")
    return ScoreModel(
        weights=nn.params_from_jsonable(obj["weights"]),
        feat_mean=np.asarray(obj["feature_mean"], dtype=np.float64),
        feat_scale=np.asarray(obj["feature_scale"], dtype=np.float64),
        hyper=obj.get("hyper", {}),
        seed=int(obj.get("seed", 0)),
    )


def pairs_manifest_lines(pairs: list[RankPair]) -> list[str]:
    import json

    return [json.dumps(p.provenance_json(), sort_keys=True) for p in pairs]
