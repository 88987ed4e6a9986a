import json
import threading
from urllib.error import HTTPError
from urllib.request import Request, urlopen

import pytest

from viewqa.cli import main
from viewqa.cloud import load_ply, save_ply
from viewqa.config import load_config, parse_config_text
from viewqa.ranker import init_score_model
from viewqa.server import AnnotationState, prepare_session, serve
from viewqa.synth import make_demo_clouds


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    clouds_dir = tmp / "clouds"
    clouds_dir.mkdir()
    for c in make_demo_clouds(2, points=500, seed=50):
        save_ply(c, clouds_dir / f"{c.id}.ply")
    cfg = tmp / "run.cfg"
    cfg.write_text(
        f"""# desk-scale test config
clouds_dir = {clouds_dir}
resolution = 48
splat_radius = 1
levels = 2
kinds = cn,ggn
grid_nv = 9
seed = 9
ssvrn_epochs = 6
ssvrn_batch = 64
cavgn_epochs = 2
cavgn_lr = 1e-4
tokens = 16
"""
    )
    return tmp


def test_config_parsing_and_overrides(workspace):
    cfg = load_config(workspace / "run.cfg", {"resolution": "64"})
    assert cfg.resolution == 64
    assert cfg.levels == 2
    assert cfg.kind_list() == ["cn", "ggn"]
    with pytest.raises(ValueError, match="unknown key"):
        parse_config_text("nonsense = 3")
    with pytest.raises(ValueError, match="key = value"):
        parse_config_text("just words")


def test_pairs_counting_mode(capsys):
    rc = main([
        "pairs", "--set", "pairs_clouds=9", "--set", "pairs_views=54",
        "--set", "pairs_kinds=7", "--set", "pairs_levels=6",
    ])
    assert rc == 0
    assert "71442" in capsys.readouterr().out

    rc = main([
        "pairs", "--set", "pairs_clouds=20", "--set", "pairs_views=54",
        "--set", "pairs_kinds=12", "--set", "pairs_levels=3",
    ])
    assert rc == 0
    assert "77760" in capsys.readouterr().out


def test_render_cli(workspace, capsys):
    ply = sorted((workspace / "clouds").glob("*.ply"))[0]
    out = workspace / "render_out"
    rc = main([
        "render", "--cloud", str(ply), "--face", "2", "--grid", "9",
        "--out", str(out), "--config", str(workspace / "run.cfg"),
    ])
    assert rc == 0
    assert len(list(out.glob("*.png"))) == 9
    assert len(list(out.glob("*.depth"))) == 9


def test_full_chain_and_determinism(workspace, capsys):
    cfgf = str(workspace / "run.cfg")
    tmp = workspace

    assert main(["pairs", "--config", cfgf, "--out", str(tmp / "pairs.jsonl")]) == 0
    assert main([
        "train-ssvrn", "--pairs", str(tmp / "pairs.jsonl"),
        "--out", str(tmp / "model.json"), "--config", cfgf,
    ]) == 0
    assert main([
        "build-dov", "--model", str(tmp / "model.json"),
        "--out", str(tmp / "dov.jsonl"), "--config", cfgf,
    ]) == 0
    assert main([
        "train-cavgn", "--dov", str(tmp / "dov.jsonl"),
        "--out", str(tmp / "cavgn.json"), "--config", cfgf,
    ]) == 0
    assert main([
        "evaluate", "--mode", "default", "--out", str(tmp / "rep.json"), "--config", cfgf,
    ]) == 0
    report = json.loads((tmp / "rep.json").read_text())
    assert -1.0 <= report["srcc"] <= 1.0

    # rank-sweep emits one report per rank
    assert main([
        "evaluate", "--mode", "rank-sweep", "--out", str(tmp / "sweep.json"),
        "--config", cfgf, "--set", f"ssvrn_model={tmp / 'model.json'}",
    ]) == 0
    sweep = json.loads((tmp / "sweep.json").read_text())
    assert len(sweep) == 9
    assert [r["config"]["quality_rank"] for r in sweep] == list(range(1, 10))

    # byte-identical reruns
    assert main(["pairs", "--config", cfgf, "--out", str(tmp / "pairs2.jsonl")]) == 0
    assert main([
        "train-ssvrn", "--pairs", str(tmp / "pairs2.jsonl"),
        "--out", str(tmp / "model2.json"), "--config", cfgf,
    ]) == 0
    assert main([
        "build-dov", "--model", str(tmp / "model2.json"),
        "--out", str(tmp / "dov2.jsonl"), "--config", cfgf,
    ]) == 0
    assert main([
        "train-cavgn", "--dov", str(tmp / "dov2.jsonl"),
        "--out", str(tmp / "cavgn2.json"), "--config", cfgf,
    ]) == 0
    for a, b in (("pairs.jsonl", "pairs2.jsonl"), ("model.json", "model2.json"),
                 ("dov.jsonl", "dov2.jsonl"), ("cavgn.json", "cavgn2.json")):
        assert (tmp / a).read_bytes() == (tmp / b).read_bytes(), a


def test_generated_mode_cli(workspace):
    cfgf = str(workspace / "run.cfg")
    rc = main([
        "evaluate", "--mode", "generated", "--out", str(workspace / "gen.json"),
        "--config", cfgf, "--set", f"cavgn_model={workspace / 'cavgn.json'}",
    ])
    assert rc == 0


def test_error_is_one_line_nonzero(workspace, capsys):
    rc = main(["render", "--cloud", str(workspace / "missing.ply"), "--face", "0"])
    assert rc == 2
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert err.strip().count("\n") == 0


def test_distort_cli_writes_variants(workspace):
    out = workspace / "variants"
    rc = main([
        "distort", "--in", str(workspace / "clouds"), "--out", str(out),
        "--config", str(workspace / "run.cfg"),
    ])
    assert rc == 0
    files = sorted(out.glob("*.ply"))
    assert len(files) == 2 * 2 * 2  # clouds x kinds x levels
    assert any("__cn_1.ply" in f.name for f in files)
    load_ply(files[0])  # parses back


# --- annotation server ------------------------------------------------------------


@pytest.fixture(scope="module")
def session(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("session")
    clouds = make_demo_clouds(2, points=400, seed=77)
    model = init_score_model(5)
    manifest = prepare_session(clouds, model, tmp, n_v=9, resolution=48)
    httpd = serve(tmp, port=0)
    port = httpd.server_address[1]
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{port}", manifest, tmp
    httpd.shutdown()
    httpd.server_close()


def _post(base, payload):
    req = Request(
        f"{base}/selection",
        data=json.dumps(payload).encode(),
        headers={"Content-Type": "application/json"},
    )
    return json.load(urlopen(req))


def test_groups_endpoint(session):
    base, manifest, _ = session
    groups = json.load(urlopen(f"{base}/groups"))
    assert len(groups) == len(manifest["groups"])
    g = groups[0]
    assert set(g) == {"group_id", "cloud_id", "face_index", "image_urls"}
    assert len(g["image_urls"]) == 9
    assert "ssvrn_worst" not in g  # answer key never leaks to the client


def test_image_endpoint(session):
    base, _, _ = session
    groups = json.load(urlopen(f"{base}/groups"))
    data = urlopen(base + groups[0]["image_urls"][0]).read()
    assert data[:4] == b"\x89PNG"
    with pytest.raises(HTTPError):
        urlopen(f"{base}/image/no_such_image")


def test_scripted_raters_and_ci(session):
    base, manifest, _ = session
    worst = {g["group_id"]: g["ssvrn_worst"] for g in manifest["groups"]}
    for gid, w in worst.items():
        _post(base, {"group_id": gid, "rater_id": "agree", "worst_index": w})
    ci = json.load(urlopen(f"{base}/ci"))
    assert ci["ci"] == 1.0
    assert ci["per_rater"]["agree"] == 1.0
    assert ci["n_groups"] == len(worst)

    for gid, w in worst.items():
        _post(base, {"group_id": gid, "rater_id": "contrarian", "worst_index": (w + 1) % 9})
    ci = json.load(urlopen(f"{base}/ci"))
    assert ci["per_rater"]["contrarian"] == 0.0
    # consensus mode with a 1-1 tie resolves to the lowest index
    assert 0.0 <= ci["ci"] <= 1.0


def test_selection_resume(session):
    base, manifest, _ = session
    picks = json.load(urlopen(f"{base}/selections?rater_id=agree"))
    assert len(picks) == len(manifest["groups"])
    none = json.load(urlopen(f"{base}/selections?rater_id=new_rater"))
    assert none == {}


def test_selection_validation(session):
    base, manifest, _ = session
    gid = manifest["groups"][0]["group_id"]
    with pytest.raises(HTTPError):
        _post(base, {"group_id": "bogus", "rater_id": "r", "worst_index": 0})
    with pytest.raises(HTTPError):
        _post(base, {"group_id": gid, "rater_id": "r", "worst_index": 99})
    with pytest.raises(HTTPError):
        _post(base, {"group_id": gid, "rater_id": "../evil", "worst_index": 0})


def test_last_write_wins(session):
    base, manifest, tmp = session
    gid = manifest["groups"][0]["group_id"]
    _post(base, {"group_id": gid, "rater_id": "flip", "worst_index": 1})
    _post(base, {"group_id": gid, "rater_id": "flip", "worst_index": 2})
    picks = json.load(urlopen(f"{base}/selections?rater_id=flip"))
    assert picks[gid] == 2
    state = AnnotationState(tmp)
    assert state.load_selections()[("flip", gid)] == 2


def test_evaluate_with_mos_csv(workspace):
    # real opinion scores override the synthetic pseudo-MOS
    mos = workspace / "mos.csv"
    lines = ["cloud_id,score"]
    import json as _json
    pairs_manifest = (workspace / "pairs.jsonl").read_text().splitlines()
    ids = sorted({
        f"{_json.loads(l)['cloud_id']}__{_json.loads(l)['kind']}_{lvl}"
        for l in pairs_manifest if l.strip()
        for lvl in (1, 2)
    })
    for i, cid in enumerate(ids):
        lines.append(f"{cid},{100 - i}")
    mos.write_text("\n".join(lines) + "\n")
    rc = main([
        "evaluate", "--mode", "default", "--out", str(workspace / "mosrep.json"),
        "--config", str(workspace / "run.cfg"), "--set", f"mos_file={mos}",
    ])
    assert rc == 0
    rep = json.loads((workspace / "mosrep.json").read_text())
    base = json.loads((workspace / "rep.json").read_text())
    assert rep["srcc"] != base["srcc"]  # the override actually changed the target
