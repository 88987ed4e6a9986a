"""Train the self-supervised viewpoint ranker and inspect its behavior.

Pairs are two projections of the same content from the same viewpoint at
different distortion levels, labeled by which level is lower. The shared
scorer is trained with the pairwise sigmoid objective, then its held-out
ranking accuracy and a sample of scores across a level ladder are shown.
"""

from viewqa import SsvrnHyper, count_pairs, extract_features, render, score, summarize, train_ssvrn
from viewqa.distort import DistortionKind
from viewqa.pipeline import build_ladders, rank_pair_dataset
from viewqa.synth import make_demo_clouds
from viewqa.viewgeom import default_viewpoints

KINDS = [DistortionKind.GEOMETRY_GAUSSIAN_NOISE, DistortionKind.COLOR_NOISE]

clouds = make_demo_clouds(4, points=1200, seed=20)
ladders = build_ladders(clouds, KINDS, levels=4, seed=20)

n_views = 6 * 9
print(
    f"pair budget per cloud: {n_views} viewpoints x {len(KINDS)} kinds x "
    f"C(5,2) = {count_pairs(n_views, len(KINDS), 4)}"
)

pairs, store = rank_pair_dataset(
    ladders, n_v=9, margin=1.25, resolution=96, splat_radius=1, seed=20
)
print(f"materialized {len(pairs)} pairs from {len(store)} rendered projections")

model, history = train_ssvrn(pairs, split=0.8, hp=SsvrnHyper(epochs=60), seed=20)
print(f"held-out ranking accuracy: {history['val_acc'][-1]:.3f}")

# scores should fall as the distortion level rises
ladder = ladders[0]
view = default_viewpoints(summarize(ladder.reference), 1.25)[0]
print(f"\nscores along the {KINDS[0].value} ladder of {ladder.reference.id} (face 0):")
ref_img = render(ladder.reference, view, 96, 1)
print(f"  reference: {score(model, extract_features(ref_img)):.4f}")
for spec, variant in ladder.variants:
    if spec.kind is KINDS[0]:
        img = render(variant, view, 96, 1)
        print(f"  level {spec.level}:   {score(model, extract_features(img)):.4f}")
