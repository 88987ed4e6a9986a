"""Command-line pipeline driver.

Subcommands: distort, render, pairs, train-ssvrn, build-dov, train-cavgn,
evaluate, serve. Every subcommand is a pure function of its inputs, the
config and the root seed; rerunning with identical inputs reproduces
outputs byte for byte. Errors exit nonzero with a one-line diagnostic.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import dov as dov_mod
from . import metrics, pipeline, ranker, server, viewgen
from .cloud import load_ply, save_ply, summarize
from .config import RunConfig, load_config
from .distort import variant_filename
from .projector import render, save_depth, save_png
from .viewgeom import default_viewpoints, sample_candidates


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument(
        "--set", dest="overrides", action="append", default=[],
        metavar="KEY=VALUE", help="override a config key (repeatable)",
    )


def _config_from(args) -> RunConfig:
    overrides = {}
    for item in args.overrides:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got '{item}'")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    return load_config(args.config, overrides)


def _ladders_from_config(cfg: RunConfig):
    clouds = pipeline.load_cloud_dir(cfg.clouds_dir)
    return pipeline.build_ladders(clouds, cfg.kind_list(), cfg.levels, cfg.seed)


def cmd_distort(args) -> int:
    cfg = _config_from(args)
    in_dir, out_dir = Path(args.in_dir), Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clouds = pipeline.load_cloud_dir(in_dir)
    ladders = pipeline.build_ladders(clouds, cfg.kind_list(), cfg.levels, cfg.seed)
    n = 0
    for ladder in ladders:
        for spec, cloud in ladder.variants:
            save_ply(cloud, out_dir / variant_filename(ladder.reference.id, spec))
            n += 1
    print(f"wrote {n} variants for {len(ladders)} clouds to {out_dir}")
    return 0


def cmd_render(args) -> int:
    cfg = _config_from(args)
    cloud = load_ply(args.cloud)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    face = default_viewpoints(summarize(cloud), cfg.margin)[args.face]
    views = [(f"f{args.face}", face)]
    if args.grid:
        grid = sample_candidates(face, args.grid)
        views = [(f"f{args.face}_c{j}", grid.candidate_view(j)) for j in range(args.grid)]
    for tag, view in views:
        img = render(cloud, view, cfg.resolution, cfg.splat_radius)
        save_png(img, out_dir / f"{cloud.id}_{tag}.png")
        save_depth(img, out_dir / f"{cloud.id}_{tag}.depth")
    print(f"rendered {len(views)} view(s) of {cloud.id} to {out_dir}")
    return 0


def cmd_pairs(args) -> int:
    cfg = _config_from(args)
    if cfg.pairs_clouds > 0:
        per_cloud = ranker.count_pairs(cfg.pairs_views, cfg.pairs_kinds, cfg.pairs_levels)
        total = cfg.pairs_clouds * per_cloud
        print(
            f"pairs: {cfg.pairs_clouds} clouds x {cfg.pairs_views} viewpoints x "
            f"{cfg.pairs_kinds} kinds x C({cfg.pairs_levels}+1,2) = {total}"
        )
        return 0
    cfg.validate(require_paths=True)
    ladders = _ladders_from_config(cfg)
    all_pairs = []
    for ladder in ladders:
        refs = pipeline.ladder_view_refs(ladder, cfg.grid_nv, cfg.margin)
        all_pairs.extend(ranker.generate_pairs(ladder, refs, cfg.seed))
    print(f"pairs: {len(ladders)} clouds -> {len(all_pairs)}")
    if args.out:
        Path(args.out).write_text("\n".join(ranker.pairs_manifest_lines(all_pairs)) + "\n")
        print(f"manifest written to {args.out}")
    return 0


def _read_pairs_manifest(path) -> list[ranker.RankPair]:
    pairs = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        row = json.loads(line)
        pairs.append(
            ranker.RankPair(
                cloud_id=row["cloud_id"], kind=row["kind"],
                level_a=int(row["level_a"]), level_b=int(row["level_b"]),
                face=int(row["face"]), candidate_index=int(row["candidate_index"]),
                label=int(row["label"]),
            )
        )
    return pairs


def cmd_train_ssvrn(args) -> int:
    cfg = _config_from(args)
    cfg.validate(require_paths=True)
    ladders = _ladders_from_config(cfg)
    by_ref = {l.reference.id: l for l in ladders}
    pairs = _read_pairs_manifest(args.pairs)
    store = ranker.FeatureStore(cfg.resolution, cfg.splat_radius)
    for ladder in ladders:
        mine = [p for p in pairs if p.cloud_id == ladder.reference.id]
        if not mine:
            continue
        n_v = None if all(p.candidate_index < 0 for p in mine) else cfg.grid_nv
        refs = pipeline.ladder_view_refs(ladder, n_v, cfg.margin)
        ranker.materialize_pairs(ladder, refs, mine, store)
    unknown = {p.cloud_id for p in pairs} - set(by_ref)
    if unknown:
        raise ValueError(f"manifest references clouds missing from clouds_dir: {sorted(unknown)}")
    hp = ranker.SsvrnHyper(
        lr=cfg.ssvrn_lr, epochs=cfg.ssvrn_epochs, decay=cfg.ssvrn_decay,
        decay_every=cfg.ssvrn_decay_every, batch_size=cfg.ssvrn_batch, split=cfg.ssvrn_split,
    )
    model, history = ranker.train_ssvrn(pairs, cfg.ssvrn_split, hp, cfg.seed)
    ranker.save_score_model(model, args.out)
    print(
        f"trained on {len(pairs)} pairs ({len(store)} projections); "
        f"final val acc {history['val_acc'][-1]:.3f}; model -> {args.out}"
    )
    return 0


def cmd_build_dov(args) -> int:
    cfg = _config_from(args)
    cfg.validate(require_paths=True)
    model = ranker.load_score_model(args.model)
    ladders = _ladders_from_config(cfg)
    records = dov_mod.build_dov(
        ladders, model, cfg.grid_nv, out_path=args.out,
        resolution=cfg.resolution, splat_radius=cfg.splat_radius,
        margin=cfg.margin, rigs_per_cloud=cfg.rigs_per_cloud, seed=cfg.seed,
        workers=cfg.parallelism,
    )
    print(f"built {len(records)} records -> {args.out}")
    return 0


def cmd_train_cavgn(args) -> int:
    cfg = _config_from(args)
    cfg.validate(require_paths=True)
    records = dov_mod.read_dov_manifest(args.dov)
    ladders = _ladders_from_config(cfg)
    clouds = pipeline.all_ladder_clouds(ladders)

    def lookup(cloud_id):
        if cloud_id not in clouds:
            raise ValueError(f"cloud '{cloud_id}' not reconstructable from clouds_dir")
        return clouds[cloud_id]

    hp = viewgen.CavgnHyper(
        lr=cfg.cavgn_lr, epochs=cfg.cavgn_epochs, decay=cfg.cavgn_decay,
        decay_every=cfg.cavgn_decay_every, split=cfg.cavgn_split,
    )
    model, history = viewgen.train_cavgn(
        records, lookup, hp, viewgen.CavgnConfig(tokens=cfg.tokens),
        margin=cfg.margin, seed=cfg.seed,
    )
    viewgen.save_cavgn_model(model, args.out)
    print(
        f"trained on {len(records)} records; final val loss "
        f"{history['val_loss'][-1]:.6f}; model -> {args.out}"
    )
    return 0


def _load_mos_csv(path) -> dict:
    mos = {}
    for ln in Path(path).read_text().splitlines():
        ln = ln.strip()
        if not ln or ln.lower().startswith("cloud_id"):
            continue
        cid, val = ln.split(",", 1)
        mos[cid.strip()] = float(val)
    return mos


def cmd_evaluate(args) -> int:
    cfg = _config_from(args)
    cfg.validate(require_paths=True)
    ladders = _ladders_from_config(cfg)
    dataset = pipeline.eval_dataset(ladders)
    if cfg.mos_file:
        table = _load_mos_csv(cfg.mos_file)
        for s in dataset:
            if s.degraded.id in table:
                s.mos = table[s.degraded.id]

    if args.mode == "rank-sweep":
        model = ranker.load_score_model(cfg.ssvrn_model or args.model)
        reports = metrics.rank_sweep(
            dataset, model, cfg.grid_nv, cfg.resolution, cfg.splat_radius, cfg.margin
        )
        for r in reports:
            print(r.table_row(f"rank {r.config['quality_rank']}/{cfg.grid_nv}"))
        payload = [r.to_json() for r in reports]
    else:
        cavgn_model = None
        if args.mode == "generated":
            cavgn_model = viewgen.load_cavgn_model(cfg.cavgn_model or args.model)
        report = metrics.compare_strategies(
            dataset, cavgn_model, args.mode,
            cfg.resolution, cfg.splat_radius, cfg.margin, cfg.seed,
            workers=cfg.parallelism,
        )
        print(report.table_row(args.mode))
        payload = report.to_json()

    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
        print(f"report -> {args.out}")
    return 0


def cmd_serve(args) -> int:
    httpd = server.serve(args.session, args.port, args.ui)
    print(f"serving annotation session {args.session} on http://127.0.0.1:{args.port}")
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="viewqa",
        description="viewpoint-aware projection PCQA pipeline",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("distort", help="build distortion ladders for every PLY")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    _add_common(p)
    p.set_defaults(fn=cmd_distort)

    p = sub.add_parser("render", help="render a cloud face to PNG + depth dump")
    p.add_argument("--cloud", required=True)
    p.add_argument("--face", type=int, required=True, choices=range(6))
    p.add_argument("--grid", type=int, default=0, help="also render an N-candidate grid")
    p.add_argument("--out", default="out")
    _add_common(p)
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("pairs", help="count/generate the rank-pair manifest")
    p.add_argument("--out", help="write JSON-lines manifest here")
    _add_common(p)
    p.set_defaults(fn=cmd_pairs)

    p = sub.add_parser("train-ssvrn", help="train the viewpoint ranking scorer")
    p.add_argument("--pairs", required=True, help="pair manifest (JSON-lines)")
    p.add_argument("--out", required=True, help="model JSON output")
    _add_common(p)
    p.set_defaults(fn=cmd_train_ssvrn)

    p = sub.add_parser("build-dov", help="build the default-optimized viewpoint dataset")
    p.add_argument("--model", required=True, help="trained scorer JSON")
    p.add_argument("--out", required=True, help="DOV manifest output (JSON-lines)")
    _add_common(p)
    p.set_defaults(fn=cmd_build_dov)

    p = sub.add_parser("train-cavgn", help="train the viewpoint generator on a DOV manifest")
    p.add_argument("--dov", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(fn=cmd_train_cavgn)

    p = sub.add_parser("evaluate", help="correlate baseline scores with MOS")
    p.add_argument(
        "--mode", required=True, choices=["random", "default", "generated", "rank-sweep"]
    )
    p.add_argument("--out", help="JSON report path")
    p.add_argument("--model", help="model JSON (generated/rank-sweep modes)")
    _add_common(p)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("serve", help="serve the annotation study API")
    p.add_argument("--port", type=int, default=8321)
    p.add_argument("--session", required=True)
    p.add_argument("--ui", help="static UI directory to serve at /")
    _add_common(p)
    p.set_defaults(fn=cmd_serve)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
