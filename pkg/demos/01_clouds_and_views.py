"""Load, summarize and project a point cloud from its six default views.

Walks the basic geometry: a synthetic colored cloud, its PLY round trip,
the cube-face viewpoints with their projection regions, and the z-buffered
splat renders written as PNGs plus raw depth dumps.
"""

from pathlib import Path

from viewqa import default_viewpoints, load_ply, render, save_depth, save_png, save_ply, summarize
from viewqa.synth import sphere_cloud

out = Path("demo_out/01")
out.mkdir(parents=True, exist_ok=True)

cloud = sphere_cloud(n=4000, seed=7, id="demo_sphere")
save_ply(cloud, out / "demo_sphere.ply")
cloud = load_ply(out / "demo_sphere.ply")  # round trip

s = summarize(cloud)
print(f"cloud {cloud.id}: {len(cloud)} points")
print(f"  centroid {s.centroid.round(4)}  diagonal {s.diagonal:.4f}")

views = default_viewpoints(s, margin=1.25)
for view in views:
    img = render(cloud, view, resolution=256, splat_radius=1)
    save_png(img, out / f"face{view.face_index}.png")
    save_depth(img, out / f"face{view.face_index}.depth")
    print(
        f"  face {view.face_index}: viewpoint {view.viewpoint.round(3)}"
        f"  coverage {img.coverage:.3f}"
    )

print(f"wrote renders to {out}/")
