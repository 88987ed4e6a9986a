"""HTTP endpoints for the worst-viewpoint annotation study.

Serves candidate projection groups, records rater selections, and reports
the consistency index between human picks and the rank model's worst
candidates. Pipeline artifacts are never mutated; all writes go to the
session directory's selections file, serialized by a lock.

Endpoints:
  GET  /groups                 -> [{group_id, cloud_id, face_index, image_urls}]
  GET  /image/<id>             -> PNG
  GET  /selections?rater_id=r  -> {group_id: worst_index} for resume
  POST /selection              -> {group_id, rater_id, worst_index} appended
  GET  /ci                     -> {ci, n_groups, total_groups, per_rater}
"""

from __future__ import annotations

import json
import re
import threading
from collections import Counter
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .cloud import PointCloud, summarize
from .metrics import consistency_index
from .projector import render, save_png
from .ranker import EmptyProjectionError, ScoreModel, extract_features, score
from .viewgeom import default_viewpoints, sample_candidates

_SAFE_ID = re.compile(r"^[A-Za-z0-9_.-]+$")


def prepare_session(
    clouds: list[PointCloud],
    model: ScoreModel,
    session_dir,
    n_v: int = 9,
    resolution: int = 256,
    splat_radius: int = 1,
    margin: float = 1.25,
) -> dict:
    """Render candidate images for every (cloud, face) group and record the
    model's worst candidate per group. Writes groups.json and images/."""
    session_dir = Path(session_dir)
    (session_dir / "images").mkdir(parents=True, exist_ok=True)
    groups = []
    for cloud in clouds:
        for face in default_viewpoints(summarize(cloud), margin):
            grid = sample_candidates(face, n_v)
            image_ids = []
            scores = []
            for j in range(n_v):
                img = render(cloud, grid.candidate_view(j), resolution, splat_radius)
                image_id = f"{cloud.id}_f{face.face_index}_c{j}"
                save_png(img, session_dir / "images" / f"{image_id}.png")
                image_ids.append(image_id)
                try:
                    scores.append(score(model, extract_features(img)))
                except EmptyProjectionError:
                    scores.append(None)
            valid = [(s, j) for j, s in enumerate(scores) if s is not None]
            if not valid:
                continue
            worst = min(valid, key=lambda t: (t[0], t[1]))[1]
            groups.append(
                {
                    "group_id": f"{cloud.id}_f{face.face_index}",
                    "cloud_id": cloud.id,
                    "face_index": face.face_index,
                    "image_ids": image_ids,
                    "ssvrn_worst": worst,
                }
            )
    manifest = {"n_v": n_v, "groups": groups}
    (session_dir / "groups.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


class AnnotationState:
    """Session data plus serialized selection appends."""

    def __init__(self, session_dir):
        self.session_dir = Path(session_dir)
        manifest_path = self.session_dir / "groups.json"
        if not manifest_path.exists():
            raise ValueError(f"no groups.json under {session_dir}; prepare the session first")
        manifest = json.loads(manifest_path.read_text())
        self.n_v = int(manifest["n_v"])
        self.groups = manifest["groups"]
        self.by_id = {g["group_id"]: g for g in self.groups}
        self.selections_path = self.session_dir / "selections.jsonl"
        self.lock = threading.Lock()

    def record_selection(self, group_id: str, rater_id: str, worst_index: int) -> None:
        if group_id not in self.by_id:
            raise KeyError(f"unknown group '{group_id}'")
        if not isinstance(worst_index, int) or not 0 <= worst_index < self.n_v:
            raise ValueError(f"worst_index must be in [0, {self.n_v})")
        if not _SAFE_ID.match(rater_id or ""):
            raise ValueError("rater_id must be [A-Za-z0-9_.-]+")
        row = {"group_id": group_id, "rater_id": rater_id, "worst_index": worst_index}
        with self.lock:
            with open(self.selections_path, "a") as f:
                f.write(json.dumps(row, sort_keys=True) + "\n")

    def load_selections(self) -> dict:
        """Latest selection per (rater, group); last write wins."""
        latest: dict = {}
        if self.selections_path.exists():
            with self.lock:
                text = self.selections_path.read_text()
            for line in text.splitlines():
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                latest[(row["rater_id"], row["group_id"])] = int(row["worst_index"])
        return latest

    def ci_report(self) -> dict:
        latest = self.load_selections()
        worst = {g["group_id"]: g["ssvrn_worst"] for g in self.groups}

        by_group: dict = {}
        by_rater: dict = {}
        for (rater, group), idx in latest.items():
            by_group.setdefault(group, []).append(idx)
            by_rater.setdefault(rater, {})[group] = idx

        per_rater = {}
        for rater, picks in sorted(by_rater.items()):
            human = [picks[g] for g in sorted(picks)]
            model = [worst[g] for g in sorted(picks)]
            per_rater[rater] = consistency_index(human, model)

        answered = sorted(by_group)
        per_group = {}
        if answered:
            # group consensus: modal pick, ties to the lowest index
            consensus = []
            for g in answered:
                counts = Counter(by_group[g])
                top = max(counts.values())
                pick = min(i for i, c in counts.items() if c == top)
                consensus.append(pick)
                per_group[g] = {"consensus": pick, "match": pick == worst[g]}
            ci = consistency_index(consensus, [worst[g] for g in answered])
        else:
            ci = None
        return {
            "ci": ci,
            "n_groups": len(answered),
            "total_groups": len(self.groups),
            "per_rater": per_rater,
            "per_group": per_group,
        }


_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".png": "image/png",
    ".json": "application/json",
    ".map": "application/json",
}


def make_handler(state: AnnotationState, ui_dir=None):
    ui_root = Path(ui_dir).resolve() if ui_dir else None

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):  # quiet by default
            pass

        def _send_json(self, obj, status: int = 200):
            body = json.dumps(obj).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _send_bytes(self, body: bytes, ctype: str, status: int = 200):
            self.send_response(status)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            url = urlparse(self.path)
            parts = [p for p in url.path.split("/") if p]
            if url.path == "/groups":
                self._send_json(
                    [
                        {
                            "group_id": g["group_id"],
                            "cloud_id": g["cloud_id"],
                            "face_index": g["face_index"],
                            "image_urls": [f"/image/{i}" for i in g["image_ids"]],
                        }
                        for g in state.groups
                    ]
                )
            elif len(parts) == 2 and parts[0] == "image":
                image_id = parts[1]
                if not _SAFE_ID.match(image_id):
                    self._send_json({"error": "bad image id"}, 400)
                    return
                path = state.session_dir / "images" / f"{image_id}.png"
                if not path.exists():
                    self._send_json({"error": "no such image"}, 404)
                    return
                self._send_bytes(path.read_bytes(), "image/png")
            elif url.path == "/selections":
                rater = parse_qs(url.query).get("rater_id", [""])[0]
                latest = state.load_selections()
                picks = {g: i for (r, g), i in latest.items() if r == rater}
                self._send_json(picks)
            elif url.path == "/ci":
                self._send_json(state.ci_report())
            elif ui_root is not None:
                rel = url.path.lstrip("/") or "index.html"
                target = (ui_root / rel).resolve()
                if not str(target).startswith(str(ui_root)) or not target.is_file():
                    self._send_json({"error": "not found"}, 404)
                    return
                ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
                self._send_bytes(target.read_bytes(), ctype)
            else:
                self._send_json({"error": "not found"}, 404)

        def do_POST(self):
            if urlparse(self.path).path != "/selection":
                self._send_json({"error": "not found"}, 404)
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                payload = json.loads(self.rfile.read(length) or b"{}")
                state.record_selection(
                    str(payload["group_id"]),
                    str(payload["rater_id"]),
                    int(payload["worst_index"]),
                )
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                self._send_json({"error": str(exc)}, 400)
                return
            self._send_json({"ok": True})

    return Handler


def serve(session_dir, port: int = 8321, ui_dir=None) -> ThreadingHTTPServer:
    """Build the threaded server; caller runs serve_forever or a thread."""
    state = AnnotationState(session_dir)
    return ThreadingHTTPServer(("127.0.0.1", port), make_handler(state, ui_dir))
