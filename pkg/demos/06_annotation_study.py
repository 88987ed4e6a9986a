"""Prepare a subjective worst-viewpoint study session and serve it.

Renders the nine candidate projections per (cloud, face) group, records
the ranker's worst pick per group as the consistency reference, and
starts the annotation API. Open the printed URL with the browser UI
(frontend/) or drive it with scripted requests; GET /ci reports the
consistency index between human consensus and the ranker.
"""

from pathlib import Path

from viewqa import SsvrnHyper, train_ssvrn
from viewqa.distort import DistortionKind
from viewqa.pipeline import build_ladders, rank_pair_dataset
from viewqa.server import prepare_session, serve
from viewqa.synth import make_demo_clouds

session_dir = Path("demo_out/06_session")

clouds = make_demo_clouds(3, points=1000, seed=88)
ladders = build_ladders(clouds, [DistortionKind.COLOR_NOISE], 3, seed=88)
pairs, _ = rank_pair_dataset(ladders, n_v=9, margin=1.25, resolution=128, splat_radius=1, seed=88)
model, hist = train_ssvrn(pairs, 0.8, SsvrnHyper(epochs=40), seed=88)
print(f"ranker held-out accuracy: {hist['val_acc'][-1]:.3f}")

variants = [c for l in ladders for _, c in l.variants]
manifest = prepare_session(variants, model, session_dir, n_v=9, resolution=128)
print(f"session ready: {len(manifest['groups'])} groups under {session_dir}")

ui = Path(__file__).resolve().parent.parent / "frontend"
httpd = serve(session_dir, port=8321, ui_dir=ui if ui.exists() else None)
print("serving on http://127.0.0.1:8321  (Ctrl-C to stop)")
try:
    httpd.serve_forever()
except KeyboardInterrupt:
    httpd.server_close()
