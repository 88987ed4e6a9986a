"""Compare viewpoint strategies and reproduce the worse-the-better sweep.

The full-reference baseline scores every degraded cloud under random,
default and generated viewpoints; predictions correlate against the
pseudo opinion scores. The rank sweep then evaluates the baseline using,
per face, the candidate at each ranker quality rank: correlation should
trend upward toward the worst-ranked views.
"""

from viewqa import SsvrnHyper, compare_strategies, rank_sweep, srcc, train_ssvrn
from viewqa.distort import DistortionKind
from viewqa.pipeline import build_ladders, eval_dataset, rank_pair_dataset
from viewqa.synth import make_demo_clouds

clouds = make_demo_clouds(6, points=1200, seed=55)
ladders = build_ladders(
    clouds, [DistortionKind.GEOMETRY_GAUSSIAN_NOISE, DistortionKind.COLOR_NOISE], 4, seed=55
)
pairs, _ = rank_pair_dataset(ladders, n_v=9, margin=1.25, resolution=96, splat_radius=1, seed=55)
model, hist = train_ssvrn(pairs, 0.8, SsvrnHyper(epochs=60), seed=55)
print(f"ranker held-out accuracy: {hist['val_acc'][-1]:.3f}\n")

dataset = eval_dataset(ladders)
print(f"evaluation set: {len(dataset)} degraded clouds with pseudo-MOS\n")

for mode in ("random", "default"):
    report = compare_strategies(dataset, None, mode, resolution=96, seed=55)
    print(report.table_row(mode))

print("\nworse-the-better sweep (rank 1 = ranker's best view per face):")
reports = rank_sweep(dataset, model, n_v=9, resolution=96, splat_radius=1)
for r in reports:
    print(r.table_row(f"rank {r.config['quality_rank']}"))
srccs = [r.srcc for r in reports]
print(f"\nSRCC trend across ranks (positive = worse views correlate better): "
      f"{srcc(list(range(1, 10)), srccs):+.3f}")
