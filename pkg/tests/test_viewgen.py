import math

import numpy as np
import pytest

from viewqa import nn
from viewqa.cloud import PointCloud, summarize
from viewqa.dov import DOVRecord
from viewqa.seeds import derive_seed
from viewqa.viewgen import (
    CavgnConfig,
    CavgnHyper,
    TrainSample,
    angle_loss,
    cavgn_objective,
    constrain,
    extract_multiscale,
    farthest_point_indices,
    generate_for_view,
    generate_viewpoint,
    init_cavgn_model,
    load_cavgn_model,
    mean_angle_loss,
    multiscale_stats,
    prepare_samples,
    save_cavgn_model,
    train_cavgn,
    view_encoding,
    _focus_attend,
    _softmax_rows,
)
from viewqa.viewgeom import default_viewpoints, lift


CFG8 = CavgnConfig(tokens=8)


def _samples_for(clouds, cfg, offsets=((1 / 3, 0.0),), faces=(0, 2)):
    samples = []
    for c in clouds:
        stats = multiscale_stats(c, cfg.tokens, cfg)
        s = summarize(c)
        views = default_viewpoints(s, 1.25)
        for fi in faces:
            view = views[fi]
            h = view.region_half_extent
            du, dv = offsets[len(samples) % len(offsets)]
            samples.append(
                TrainSample(
                    stats_g=stats["geometry"], stats_t=stats["texture"],
                    enc=view_encoding(view), view=view,
                    target=lift(view, du * h, dv * h),
                    center=s.centroid, tag=c.id,
                )
            )
    return samples


# --- angle loss ---------------------------------------------------------------


def test_angle_loss_identical_zero():
    c = np.zeros(3)
    assert angle_loss([1, 2, 3], [1, 2, 3], c) == pytest.approx(0.0)
    assert angle_loss([1, 2, 3], [2, 4, 6], c) == pytest.approx(0.0)  # scale invariant


def test_angle_loss_antipodal_two():
    assert angle_loss([1.0, 0, 0], [-1.0, 0, 0], np.zeros(3)) == pytest.approx(2.0)


def test_angle_loss_orthogonal_one():
    assert angle_loss([1.0, 0, 0], [0, 1.0, 0], np.zeros(3)) == pytest.approx(1.0)


def test_angle_loss_range_and_scale_invariance():
    rng = np.random.default_rng(1)
    c = rng.normal(size=3)
    for _ in range(50):
        a = c + rng.normal(size=3)
        b = c + rng.normal(size=3)
        val = angle_loss(a, b, c)
        assert 0.0 <= val <= 2.0
        s, t = rng.uniform(0.1, 10, size=2)
        scaled = angle_loss(c + s * (a - c), c + t * (b - c), c)
        assert scaled == pytest.approx(val, abs=1e-12)


def test_angle_loss_zero_vector_rejected():
    with pytest.raises(ValueError):
        angle_loss([0.0, 0, 0], [1, 0, 0], np.zeros(3))


# --- multiscale features --------------------------------------------------------


def test_fps_deterministic_and_spread():
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(200, 3))
    idx = farthest_point_indices(pts, 16)
    assert idx[0] == 0
    assert len(set(idx.tolist())) == 16
    assert np.array_equal(idx, farthest_point_indices(pts, 16))
    with pytest.raises(ValueError):
        farthest_point_indices(pts, 300)


def test_single_token_collapse(small_clouds):
    model = init_cavgn_model(1, CFG8)
    feats = extract_multiscale(model, small_clouds[0], "geometry", k=1)
    assert feats.token_count == 1
    assert np.array_equal(feats.f_p, feats.f_c[0])
    assert np.array_equal(feats.F[0], np.concatenate([feats.f_c[0], feats.f_p]))


def test_uniform_color_texture_std_zero():
    rng = np.random.default_rng(3)
    pts = rng.uniform(-1, 1, size=(300, 3))
    cloud = PointCloud(pts, np.full((300, 3), 120, dtype=np.uint8), "flat")
    stats = multiscale_stats(cloud, 16, CFG8)
    for stage in stats["texture"]:
        assert np.allclose(stage[:, 3:6], 0.0)
        covered = stage[:, 0:3][stage[:, 0:3].sum(axis=1) > 0]
        if covered.size:
            assert np.allclose(covered, 120 / 255.0)


def test_pooling_matches_independent_max(small_clouds):
    model = init_cavgn_model(4, CFG8)
    feats = extract_multiscale(model, small_clouds[1], "geometry", k=8)
    manual = feats.f_c.max(axis=0)
    assert np.array_equal(feats.f_p, manual)
    # every expanded row carries the same pooled vector
    w = feats.f_c.shape[1]
    assert np.all(feats.F[:, w:] == feats.f_p)


def test_empty_neighborhood_zero_stats():
    # two far-apart points: no neighbors within any stage radius of diag*0.08
    cloud = PointCloud(
        [[0.0, 0, 0], [100.0, 0, 0]], [[10, 10, 10], [20, 20, 20]], "sparse"
    )
    stats = multiscale_stats(cloud, 2, CFG8)
    for stage in stats["geometry"]:
        assert np.allclose(stage, 0.0)


# --- constrain / attention ------------------------------------------------------


def test_zero_value_weights_keep_residual(small_clouds):
    model = init_cavgn_model(5, CFG8)
    model.params["g.Wv"] = np.zeros_like(model.params["g.Wv"])
    fg = extract_multiscale(model, small_clouds[0], "geometry", k=8)
    enc = view_encoding(default_viewpoints(summarize(small_clouds[0]), 1.25)[0])
    y, cache = _focus_attend(model.params, "g", fg.F, enc, model.config.leaky_slope)
    x3 = cache[8]
    assert np.array_equal(y, x3)  # attention contribution exactly zero


def test_token_permutation_invariance(small_clouds):
    model = init_cavgn_model(6, CFG8)
    cloud = small_clouds[2]
    view = default_viewpoints(summarize(cloud), 1.25)[1]
    fg = extract_multiscale(model, cloud, "geometry", k=8)
    ft = extract_multiscale(model, cloud, "texture", k=8)
    base = constrain(model, fg, ft, view)

    perm = np.random.default_rng(0).permutation(8)
    fg2 = extract_multiscale(model, cloud, "geometry", k=8)
    ft2 = extract_multiscale(model, cloud, "texture", k=8)
    fg2.F = fg2.F[perm]
    ft2.F = ft2.F[perm]
    permuted = constrain(model, fg2, ft2, view)
    assert np.allclose(base.fused, permuted.fused, atol=1e-12)
    assert np.allclose(base.tokens_geometry[perm], permuted.tokens_geometry, atol=1e-12)


def test_softmax_rows_hand_computed():
    logits = np.array([[0.0, math.log(3.0), 0.0]])
    rows = _softmax_rows(logits)
    assert np.allclose(rows, [[0.2, 0.6, 0.2]])
    rng = np.random.default_rng(1)
    m = rng.normal(size=(3, 3))
    rows = _softmax_rows(m)
    assert np.allclose(rows.sum(axis=1), 1.0)
    for i in range(3):
        e = np.exp(m[i] - m[i].max())
        assert np.allclose(rows[i], e / e.sum(), atol=1e-12)


# --- head / generation ----------------------------------------------------------


def test_zero_head_returns_default_viewpoint(small_clouds):
    model = init_cavgn_model(7, CFG8, zero_head=True)
    view = default_viewpoints(summarize(small_clouds[0]), 1.25)[3]
    vp = generate_for_view(model, small_clouds[0], view)
    assert np.allclose(vp, view.viewpoint, atol=1e-15)


def test_in_plane_for_random_models(small_clouds):
    view = default_viewpoints(summarize(small_clouds[1]), 1.25)[0]
    h = view.region_half_extent
    rng = np.random.default_rng(9)
    for t in range(50):
        model = init_cavgn_model(t, CFG8, zero_head=False)
        fused = rng.normal(size=2 * CFG8.hidden) * 10
        vp = generate_viewpoint(model, fused, view)
        assert abs((vp - view.viewpoint) @ view.direction) <= 1e-9 * h


def test_clamp_rule(small_clouds):
    view = default_viewpoints(summarize(small_clouds[0]), 1.25)[0]
    h = view.region_half_extent
    model = init_cavgn_model(8, CFG8, zero_head=True)
    model.params["head.c4"] = np.array([h + 5.0, 0.0])
    vp = generate_viewpoint(model, np.zeros(2 * CFG8.hidden), view)
    u = (vp - view.viewpoint) @ view.frame_u
    v = (vp - view.viewpoint) @ view.frame_v
    assert u == pytest.approx(h)
    assert v == pytest.approx(0.0)


# --- objective gradient ----------------------------------------------------------


def test_objective_gradient_matches_finite_differences(small_clouds):
    model = init_cavgn_model(2024, CFG8, zero_head=False)
    model.params["head.H4"] *= 0.05  # keep uv inside the clamp region
    model.params["head.c4"] *= 0.0
    samples = _samples_for(small_clouds[:2], CFG8)
    loss, grads = cavgn_objective(model, samples)
    assert math.isfinite(loss) and loss > 0

    vec, spec = nn.flatten_params(model.params)
    gvec, _ = nn.flatten_params(grads)
    rng = np.random.default_rng(7)
    probe = rng.choice(len(vec), 60, replace=False)
    h = 1e-5
    for i in probe:
        v0 = vec[i]
        vec[i] = v0 + h
        model.params = nn.unflatten_params(vec, spec)
        lp, _ = cavgn_objective(model, samples)
        vec[i] = v0 - h
        model.params = nn.unflatten_params(vec, spec)
        lm, _ = cavgn_objective(model, samples)
        vec[i] = v0
        fd = (lp - lm) / (2 * h)
        assert abs(fd - gvec[i]) / max(abs(fd), abs(gvec[i]), 1e-6) < 1e-4
    model.params = nn.unflatten_params(vec, spec)


# --- training ---------------------------------------------------------------------


def _fixed_point_records(clouds):
    records = []
    for c in clouds:
        s = summarize(c)
        for view in default_viewpoints(s, 1.25):
            records.append(
                DOVRecord(
                    cloud_id=c.id, distortion=None, face_index=view.face_index,
                    default_viewpoint=view.viewpoint,
                    optimized_viewpoint=view.viewpoint,
                    candidate_scores=[None] * 9, candidate_rank_of_optimized=9,
                )
            )
    return records


def test_fixed_point_dataset_stays_at_zero(small_clouds):
    records = _fixed_point_records(small_clouds[:2])
    lookup = {c.id: c for c in small_clouds}
    hp = CavgnHyper(lr=1e-3, epochs=3, split=0.8)
    model, hist = train_cavgn(records, lambda cid: lookup[cid], hp, CFG8, seed=3)
    assert all(l < 1e-9 for l in hist["train_loss"])
    assert all(l < 1e-9 for l in hist["val_loss"])


def test_constant_offset_learnable(small_clouds):
    records = []
    for c in small_clouds:
        s = summarize(c)
        for view in default_viewpoints(s, 1.25):
            h = view.region_half_extent
            records.append(
                DOVRecord(
                    cloud_id=c.id, distortion=None, face_index=view.face_index,
                    default_viewpoint=view.viewpoint,
                    optimized_viewpoint=lift(view, h / 3.0, 0.0),
                    candidate_scores=[None] * 9, candidate_rank_of_optimized=9,
                )
            )
    lookup = {c.id: c for c in small_clouds}
    hp = CavgnHyper(lr=1e-3, epochs=30, decay=0.5, decay_every=10, split=0.8)
    model, hist = train_cavgn(records, lambda cid: lookup[cid], hp, CFG8, seed=5)

    untrained = init_cavgn_model(derive_seed(5, "cavgn", "init"), CFG8)
    samples = prepare_samples(records, lambda cid: lookup[cid], CFG8, 1.25)
    before = mean_angle_loss(untrained, samples)
    after = mean_angle_loss(model, samples)
    assert after <= 0.5 * before


def test_train_deterministic(small_clouds):
    records = _fixed_point_records(small_clouds[:2])
    for rec in records[::2]:
        rec.optimized_viewpoint = rec.optimized_viewpoint + 0.05
    lookup = {c.id: c for c in small_clouds}
    hp = CavgnHyper(lr=1e-4, epochs=4)
    m1, _ = train_cavgn(records, lambda cid: lookup[cid], hp, CFG8, seed=6)
    m2, _ = train_cavgn(records, lambda cid: lookup[cid], hp, CFG8, seed=6)
    for k in m1.params:
        assert np.array_equal(m1.params[k], m2.params[k])


def test_model_serialization_roundtrip(tmp_path, small_clouds):
    model = init_cavgn_model(11, CFG8, zero_head=False)
    save_cavgn_model(model, tmp_path / "g.json")
    back = load_cavgn_model(tmp_path / "g.json")
    assert back.config == model.config
    view = default_viewpoints(summarize(small_clouds[0]), 1.25)[0]
    a = generate_for_view(model, small_clouds[0], view)
    b = generate_for_view(back, small_clouds[0], view)
    assert np.array_equal(a, b)
