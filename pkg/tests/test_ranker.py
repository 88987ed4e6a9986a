import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from viewqa import nn
from viewqa.cloud import PointCloud, summarize
from viewqa.distort import DistortionKind, DistortionLadder, build_ladder
from viewqa.projector import ProjectedImage
from viewqa.ranker import (
    EmptyProjectionError,
    FEATURE_DIM,
    FeatureStore,
    SsvrnHyper,
    count_pairs,
    extract_features,
    generate_pairs,
    init_score_model,
    load_score_model,
    materialize_pairs,
    pair_loss,
    pair_objective,
    rank_probability,
    ranking_accuracy,
    save_score_model,
    score,
    train_ssvrn,
    view_refs_from_grids,
    view_refs_from_views,
)
from viewqa.viewgeom import default_viewpoints, sample_candidates


def _image(color, depth, mask, view=None):
    h, w = mask.shape
    pidx = np.where(mask, 0, -1)
    return ProjectedImage(w, h, color, np.where(mask, depth, np.inf), mask, pidx, view, 0)


def _random_image(rng, size=16, coverage=0.7):
    mask = rng.random((size, size)) < coverage
    if not mask.any():
        mask[size // 2, size // 2] = True
    color = rng.integers(0, 256, size=(size, size, 3)).astype(np.uint8)
    color[~mask] = 0
    depth = rng.uniform(1.0, 3.0, size=(size, size))
    return _image(color, depth, mask)


def test_constant_fully_covered_image_features():
    size = 12
    color = np.full((size, size, 3), 77, dtype=np.uint8)
    depth = np.full((size, size), 2.5)
    mask = np.ones((size, size), dtype=bool)
    f = extract_features(_image(color, depth, mask))
    assert np.allclose(f[0:3], 77 / 255.0)
    assert np.allclose(f[3:6], 0.0)      # channel stds
    assert np.allclose(f[6:12], 0.0)     # gradient stats
    assert f[12] == pytest.approx(2.5)
    assert f[13] == 0.0 and f[14] == 0.0
    assert f[15] == 1.0
    assert np.allclose(f[16:24], 0.0)


def test_rotation_invariant_stats():
    rng = np.random.default_rng(2)
    img = _random_image(rng)
    rot = _image(
        np.rot90(img.color).copy(),
        np.rot90(np.where(img.mask, img.depth, 0)).copy(),
        np.rot90(img.mask).copy(),
    )
    f0, f1 = extract_features(img), extract_features(rot)
    assert f0[15] == pytest.approx(f1[15])      # coverage ratio
    assert np.allclose(f0[0:3], f1[0:3])        # channel means
    assert np.allclose(f0[12:15], f1[12:15])    # depth stats


def test_features_match_independent_recomputation():
    rng = np.random.default_rng(3)
    img = _random_image(rng, size=16)
    f = extract_features(img)

    mask = img.mask
    rgb = img.color.astype(float) / 255.0
    n_cov = mask.sum()
    size = 16

    def grad_field(field):
        gx = np.zeros_like(field)
        gy = np.zeros_like(field)
        for y in range(size):
            for x in range(size):
                if 0 < x < size - 1 and mask[y, x - 1] and mask[y, x + 1]:
                    gx[y, x] = (field[y, x + 1] - field[y, x - 1]) / 2
                if 0 < y < size - 1 and mask[y - 1, x] and mask[y + 1, x]:
                    gy[y, x] = (field[y + 1, x] - field[y - 1, x]) / 2
        return gx, gy

    for c in range(3):
        vals = rgb[:, :, c][mask]
        assert f[c] == pytest.approx(vals.mean(), abs=1e-12)
        assert f[3 + c] == pytest.approx(vals.std(), abs=1e-12)
        gx, gy = grad_field(rgb[:, :, c])
        gm = np.hypot(gx, gy)[mask]
        assert f[6 + c] == pytest.approx(gm.mean(), abs=1e-12)
        assert f[9 + c] == pytest.approx(gm.std(), abs=1e-12)

    depth = img.depth[mask]
    assert f[12] == pytest.approx(depth.mean(), abs=1e-12)
    assert f[14] == pytest.approx(depth.max() - depth.min(), abs=1e-12)

    ys, xs = np.nonzero(mask)
    area = (ys.max() - ys.min() + 1) * (xs.max() - xs.min() + 1)
    assert f[15] == pytest.approx(n_cov / area, abs=1e-12)

    lum = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
    gx, gy = grad_field(lum)
    hist = np.zeros(8)
    for y in range(size):
        for x in range(size):
            if mask[y, x] and (gx[y, x] != 0 or gy[y, x] != 0):
                theta = math.atan2(gy[y, x], gx[y, x])
                hist[min(int((theta + math.pi) / (2 * math.pi) * 8), 7)] += 1
    assert np.allclose(f[16:24], hist / n_cov, atol=1e-12)


def test_background_padding_never_changes_features():
    rng = np.random.default_rng(4)
    img = _random_image(rng, size=12)
    pad = 5
    big_mask = np.zeros((12 + 2 * pad, 12 + 2 * pad), dtype=bool)
    big_mask[pad:-pad, pad:-pad] = img.mask
    big_color = np.zeros((12 + 2 * pad, 12 + 2 * pad, 3), dtype=np.uint8)
    big_color[pad:-pad, pad:-pad] = img.color
    big_depth = np.zeros((12 + 2 * pad, 12 + 2 * pad))
    big_depth[pad:-pad, pad:-pad] = np.where(img.mask, img.depth, 0)
    padded = _image(big_color, big_depth, big_mask)
    assert np.allclose(extract_features(img), extract_features(padded), atol=1e-12)


def test_empty_projection_rejected():
    mask = np.zeros((8, 8), dtype=bool)
    with pytest.raises(EmptyProjectionError, match="empty projection"):
        extract_features(_image(np.zeros((8, 8, 3), np.uint8), np.zeros((8, 8)), mask))


# --- scoring -----------------------------------------------------------------


def test_zero_model_scores_half():
    model = init_score_model(1)
    for k in model.weights:
        model.weights[k] = np.zeros_like(model.weights[k])
    rng = np.random.default_rng(0)
    for _ in range(5):
        assert score(model, rng.normal(size=FEATURE_DIM)) == 0.5


def test_score_in_open_unit_interval():
    model = init_score_model(2)
    rng = np.random.default_rng(1)
    for _ in range(20):
        s = score(model, rng.normal(size=FEATURE_DIM) * 10)
        assert 0.0 < s < 1.0


def test_score_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    model = init_score_model(3)
    x = rng.normal(size=(1, FEATURE_DIM))
    y = np.array([1.0])
    xb = rng.normal(size=(1, FEATURE_DIM))
    _, grads = pair_objective(model, x, xb, y)
    vec, spec = nn.flatten_params(model.weights)
    gvec, _ = nn.flatten_params(grads)
    h = 1e-6
    probe = rng.choice(len(vec), 60, replace=False)
    for i in probe:
        v0 = vec[i]
        vec[i] = v0 + h
        model.weights = nn.unflatten_params(vec, spec)
        lp, _ = pair_objective(model, x, xb, y)
        vec[i] = v0 - h
        model.weights = nn.unflatten_params(vec, spec)
        lm, _ = pair_objective(model, x, xb, y)
        vec[i] = v0
        fd = (lp - lm) / (2 * h)
        assert abs(fd - gvec[i]) / max(abs(fd), abs(gvec[i]), 1e-6) < 1e-4
    model.weights = nn.unflatten_params(vec, spec)


def test_rank_probability_values():
    assert rank_probability(0.7, 0.7) == 0.5
    assert rank_probability(math.log(3), 0.0) == pytest.approx(0.75, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(
    a=st.floats(-50, 50, allow_nan=False),
    b=st.floats(-50, 50, allow_nan=False),
)
def test_rank_probability_antisymmetry(a, b):
    assert abs(rank_probability(a, b) + rank_probability(b, a) - 1.0) < 1e-12


def test_rank_probability_stable_in_tails():
    assert rank_probability(1000.0, 0.0) == pytest.approx(1.0)
    assert rank_probability(0.0, 1000.0) == pytest.approx(0.0, abs=1e-300)


def test_pair_loss_values():
    assert pair_loss(1.0 - 1e-15, 1.0) == pytest.approx(0.0, abs=1e-9)
    assert pair_loss(0.5, 0.5) == pytest.approx(math.log(2.0))
    rng = np.random.default_rng(2)
    for _ in range(20):
        p = float(rng.uniform(0.01, 0.99))
        assert pair_loss(p, 1.0) == pytest.approx(pair_loss(1.0 - p, 0.0))


# --- pair generation ---------------------------------------------------------


def _tiny_ladder(n_points=60, kinds=(DistortionKind.COLOR_NOISE,), levels=2, seed=0):
    rng = np.random.default_rng(seed)
    cloud = PointCloud(
        rng.uniform(-1, 1, size=(n_points, 3)),
        rng.integers(0, 256, size=(n_points, 3)),
        f"tiny{seed}",
    )
    return build_ladder(cloud, kinds, levels, seed)


def test_count_pairs_formula():
    assert count_pairs(54, 7, 6) == 7938
    assert 9 * count_pairs(54, 7, 6) == 71442
    assert 20 * count_pairs(54, 12, 3) == 77760
    assert count_pairs(6, 1, 1) == 6


def test_generate_pairs_single_level_reference_pairs():
    ladder = _tiny_ladder(levels=2)
    # L=1 case per the counting example: hand-build a one-level ladder
    one = DistortionLadder(ladder.reference, ladder.variants[:1], (DistortionKind.COLOR_NOISE,), 1)
    views = default_viewpoints(summarize(ladder.reference), 1.25)
    pairs = generate_pairs(one, view_refs_from_views(views), seed=3)
    assert len(pairs) == 6
    assert all({p.level_a, p.level_b} == {0, 1} for p in pairs)


def test_generate_pairs_counts_and_labels():
    ladder = _tiny_ladder(kinds=(DistortionKind.COLOR_NOISE, DistortionKind.GEOMETRY_GAUSSIAN_NOISE), levels=3)
    views = default_viewpoints(summarize(ladder.reference), 1.25)
    grids = [sample_candidates(v, 9) for v in views]
    pairs = generate_pairs(ladder, view_refs_from_grids(grids), seed=3)
    assert len(pairs) == count_pairs(54, 2, 3)
    for p in pairs:
        assert p.level_a != p.level_b
        assert p.label == (1 if p.level_a < p.level_b else 0)
    # orientation randomization actually both ways
    assert {p.label for p in pairs} == {0, 1}


def test_materialize_and_cache(small_clouds):
    ladder = build_ladder(small_clouds[0], [DistortionKind.COLOR_NOISE], 2, seed=1)
    views = default_viewpoints(summarize(ladder.reference), 1.25)
    refs = view_refs_from_views(views)
    pairs = generate_pairs(ladder, refs, seed=1)
    store = FeatureStore(resolution=32, splat_radius=1)
    materialize_pairs(ladder, refs, pairs, store)
    # 3 level-pairs x 6 faces but only 3 distinct clouds x 6 views rendered
    assert len(store) == 18
    assert all(p.feats_a is not None and p.feats_b is not None for p in pairs)


# --- training ----------------------------------------------------------------


def _synthetic_pairs(n, seed, separable=True, gap=0.2):
    """feature[0] encodes quality when separable; labels track it."""
    rng = np.random.default_rng(seed)
    pairs = []
    from viewqa.ranker import RankPair

    for i in range(n):
        qa, qb = rng.uniform(0, 1, size=2)
        while abs(qa - qb) < gap:
            qa, qb = rng.uniform(0, 1, size=2)
        fa = rng.normal(size=FEATURE_DIM) * 0.03
        fb = rng.normal(size=FEATURE_DIM) * 0.03
        fa[0] = qa
        fb[0] = qb
        label = 1 if qa > qb else 0
        if not separable:
            label = int(rng.random() < 0.5)
        pairs.append(
            RankPair("syn", "cn", 1, 2, i % 6, -1, label, feats_a=fa, feats_b=fb)
        )
    return pairs


def test_train_separable_reaches_95():
    pairs = _synthetic_pairs(1000, 11)
    hp = SsvrnHyper(lr=5e-3, epochs=100, decay=0.9, decay_every=10, batch_size=64)
    model, hist = train_ssvrn(pairs, split=0.8, hp=hp, seed=4)
    assert hist["val_acc"][-1] >= 0.95


def test_train_null_signal_stays_near_chance():
    pairs = _synthetic_pairs(600, 12, separable=False)
    hp = SsvrnHyper(lr=3e-3, epochs=30, decay=0.9, decay_every=10, batch_size=64)
    model, hist = train_ssvrn(pairs, split=0.8, hp=hp, seed=5)
    assert 0.4 <= hist["val_acc"][-1] <= 0.6


def test_train_deterministic():
    pairs = _synthetic_pairs(200, 13)
    hp = SsvrnHyper(lr=1e-3, epochs=10, batch_size=32)
    m1, _ = train_ssvrn(pairs, 0.8, hp, seed=6)
    m2, _ = train_ssvrn(pairs, 0.8, hp, seed=6)
    for k in m1.weights:
        assert np.array_equal(m1.weights[k], m2.weights[k])


def test_full_batch_loss_non_increasing():
    pairs = _synthetic_pairs(10, 14)
    hp = SsvrnHyper(lr=1e-3, epochs=50, decay=1.0, decay_every=0, batch_size=10)
    _, hist = train_ssvrn(pairs, split=0.9, hp=hp, seed=7)
    losses = hist["train_loss"]
    assert all(b <= a + 1e-9 for a, b in zip(losses, losses[1:]))


def test_ranking_accuracy_rules():
    pairs = _synthetic_pairs(50, 15)
    model = init_score_model(8)
    # constant scorer: zero weights -> all scores 0.5 -> ties count incorrect
    for k in model.weights:
        model.weights[k] = np.zeros_like(model.weights[k])
    assert ranking_accuracy(model, pairs) == 0.0

    # perfect scorer via hand-built weights: score = sigmoid(w * feature0)
    perfect = init_score_model(9)
    for k in perfect.weights:
        perfect.weights[k] = np.zeros_like(perfect.weights[k])
    perfect.weights["W1"][0, 0] = 1.0
    perfect.weights["W2"][0, 0] = 1.0
    perfect.weights["W3"][0, 0] = 1.0
    acc = ranking_accuracy(perfect, pairs)
    assert acc == 1.0


def test_random_model_near_chance_on_balanced_pairs():
    pairs = _synthetic_pairs(1000, 16, separable=False)
    model = init_score_model(10)
    acc = ranking_accuracy(model, pairs)
    assert 0.4 <= acc <= 0.6


def test_model_serialization_roundtrip(tmp_path):
    pairs = _synthetic_pairs(64, 17)
    model, _ = train_ssvrn(pairs, 0.8, SsvrnHyper(epochs=3), seed=8)
    save_score_model(model, tmp_path / "m.json")
    back = load_score_model(tmp_path / "m.json")
    x = np.random.default_rng(0).normal(size=FEATURE_DIM)
    assert score(model, x) == score(back, x)


def test_train_validates_inputs():
    with pytest.raises(ValueError):
        train_ssvrn([], 0.8)
    pairs = _synthetic_pairs(10, 18)
    with pytest.raises(ValueError):
        train_ssvrn(pairs, 1.5)
    bare = _synthetic_pairs(10, 19)
    for p in bare:
        p.feats_a = None
    with pytest.raises(ValueError, match="materialized"):
        train_ssvrn(bare, 0.8)
