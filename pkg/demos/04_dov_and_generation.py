"""Build a default-optimized viewpoint dataset and train the generator.

The trained ranker grades all nine grid candidates per face and the worst
one becomes the optimized viewpoint (the worse the better). The generator
then learns to map cloud content plus a default viewpoint to that
optimized viewpoint under the angle loss, constrained to the region plane.
"""

from pathlib import Path

import numpy as np

from viewqa import (
    CavgnConfig,
    CavgnHyper,
    SsvrnHyper,
    angle_loss,
    build_dov,
    summarize,
    train_cavgn,
    train_ssvrn,
)
from viewqa.distort import DistortionKind
from viewqa.pipeline import all_ladder_clouds, build_ladders, rank_pair_dataset
from viewqa.synth import make_demo_clouds
from viewqa.viewgen import generate_for_view
from viewqa.viewgeom import default_viewpoints, plane_coords

out = Path("demo_out/04")
out.mkdir(parents=True, exist_ok=True)

clouds = make_demo_clouds(4, points=1200, seed=31)
ladders = build_ladders(
    clouds, [DistortionKind.GEOMETRY_GAUSSIAN_NOISE, DistortionKind.COLOR_NOISE], 3, seed=31
)

pairs, _ = rank_pair_dataset(ladders, n_v=9, margin=1.25, resolution=96, splat_radius=1, seed=31)
ranker_model, hist = train_ssvrn(pairs, 0.8, SsvrnHyper(epochs=50), seed=31)
print(f"ranker held-out accuracy: {hist['val_acc'][-1]:.3f}")

records = build_dov(
    ladders, ranker_model, 9, out_path=out / "dov.jsonl",
    resolution=96, splat_radius=1, seed=31,
)
moved = sum(
    1 for r in records if not np.allclose(r.optimized_viewpoint, r.default_viewpoint)
)
print(f"DOV: {len(records)} records, optimized != default on {moved}")

store = all_ladder_clouds(ladders)
gen, ghist = train_cavgn(
    records, lambda cid: store[cid],
    CavgnHyper(lr=3e-4, epochs=12, decay=0.5, decay_every=4),
    CavgnConfig(tokens=48), seed=31,
)
print(f"generator val angle loss: {ghist['val_loss'][-1]:.5f}")

cloud = clouds[0]
print(f"\ngenerated offsets for {cloud.id} (units of region half-extent):")
for view in default_viewpoints(summarize(cloud), 1.25):
    vp = generate_for_view(gen, cloud, view)
    u, v = plane_coords(view, vp)
    h = view.region_half_extent
    print(f"  face {view.face_index}: (u, v) = ({u / h:+.3f}, {v / h:+.3f})h"
          f"  angle-vs-default {angle_loss(vp, view.viewpoint, view.center):.5f}")
