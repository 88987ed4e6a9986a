"""Build graded distortion ladders and check their severity ordering.

Each distortion kind gets an L-step ladder; a per-kind severity proxy
(displacement, color delta or removal fraction) must grow strictly with
the level, which is what the self-supervised pair labels rely on.
"""

from viewqa import ALL_KINDS, build_ladder, pseudo_mos, severity
from viewqa.synth import box_cloud

cloud = box_cloud(n=3000, seed=3, id="demo_box")
ladder = build_ladder(cloud, ALL_KINDS, levels=4, seed=42)

print(f"{ladder.T} kinds x {ladder.L} levels = {len(ladder.variants)} variants\n")
print(f"{'variant':<16}{'points':>8}{'severity':>12}{'pseudo-MOS':>12}")
for spec, variant in ladder.variants:
    sev = severity(ladder.reference, variant, spec)
    print(f"{spec.label():<16}{len(variant):>8}{sev:>12.5f}{pseudo_mos(spec):>12.1f}")

by_kind = {}
for spec, variant in ladder.variants:
    by_kind.setdefault(spec.kind.value, []).append(
        severity(ladder.reference, variant, spec)
    )
for kind, vals in by_kind.items():
    monotone = all(a < b for a, b in zip(vals, vals[1:]))
    print(f"\n{kind}: severity strictly increasing -> {monotone}")
