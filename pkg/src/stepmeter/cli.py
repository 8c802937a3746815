"""Command line interface.

Exit codes: 0 success, 2 usage error, 3 parse failure, 4 infeasible
split or label coverage, 5 training divergence, 1 anything else. Errors
print one structured JSON line to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, annotation, features, metrics, model, pipeline, simfile
from .jsonio import dumps_canonical, read_json, write_atomic_json

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_INFEASIBLE = 4
EXIT_DIVERGED = 5


def default_cache_dir() -> Path:
    env = os.environ.get("STEPMETER_CACHE_DIR")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "stepmeter"


def _fail(kind: str, message: str, code: int) -> int:
    print(dumps_canonical({"error": kind, "message": message}), file=sys.stderr)
    return code


def _song_id(path: str) -> str:
    p = Path(path)
    return p.with_suffix("").as_posix()


def cmd_parse(args) -> int:
    result = simfile.parse_pack(args.pack)
    for failure in result.failures:
        print(f"warning: {failure.path}: {failure.error}", file=sys.stderr)
    if not result.songs:
        return _fail("ParseFailure", "no song in the pack parsed", EXIT_PARSE)
    songs = []
    for song in result.songs:
        songs.append(
            pipeline.ManifestSong(
                song_id=_song_id(song.source_path),
                path=song.source_path,
                levels=[
                    pipeline.ManifestLevel(index=i, raw_meter=level.meter)
                    for i, level in enumerate(song.levels)
                ],
            )
        )
    manifest = pipeline.Manifest(dataset_name=args.dataset_name, songs=songs)
    manifest.save(args.out)
    print(f"{len(songs)} songs, {sum(len(s.levels) for s in songs)} levels -> {args.out}")
    return EXIT_OK


def _load_pack_levels(manifest: pipeline.Manifest, pack_dir: str):
    """(song_id, level_index) -> (Level, SongHeader, title) for manifest entries."""
    out = {}
    for entry in manifest.songs:
        song = simfile.parse_sm(Path(pack_dir, entry.path).read_bytes())
        for lv in entry.levels:
            out[(entry.song_id, lv.index)] = (
                song.levels[lv.index],
                song.header,
                song.header.title or entry.song_id,
            )
    return out


def cmd_features(args) -> int:
    manifest = pipeline.Manifest.load(args.manifest)
    levels = _load_pack_levels(manifest, args.pack)
    sequences = []
    static_rows = []
    for (song_id, index), (level, header, _title) in sorted(levels.items()):
        try:
            seq = features.extract_sequence(level, header, song_id=song_id, level_index=index)
        except features.EmptyChart:
            print(f"warning: {song_id}#{index} has no events; skipped", file=sys.stderr)
            continue
        sequences.append(seq)
        if args.pattern_out:
            static_rows.append(
                {
                    "song_id": song_id,
                    "level_index": index,
                    "features": [float(v) for v in model.pattern_features(level, header)],
                }
            )
    features.write_feature_file(args.out, sequences)
    if args.pattern_out:
        from .jsonio import write_atomic_text

        lines = [dumps_canonical(r) for r in static_rows]
        write_atomic_text(args.pattern_out, "\n".join(lines) + ("\n" if lines else ""))
    print(f"{len(sequences)} feature sequences -> {args.out}")
    return EXIT_OK


def cmd_pool(args) -> int:
    manifest = pipeline.Manifest.load(args.manifest)
    pooling = pipeline.pool_categories(manifest.label_counts(), args.threshold)
    manifest.pooling = pooling
    manifest.save(args.out)
    print(f"pooled to {pooling.k} categories -> {args.out}")
    return EXIT_OK


def cmd_split(args) -> int:
    manifest = pipeline.Manifest.load(args.manifest)
    song_labels = manifest.pooled_song_labels()
    split_seed = pipeline.substream_seed(args.seed, "split")
    manifest.splits = [
        pipeline.mc_split(song_labels, seed=split_seed, replicate=r, test_fraction=args.test_fraction)
        for r in range(args.replicates)
    ]
    manifest.save(args.out)
    print(f"{args.replicates} splits -> {args.out}")
    return EXIT_OK


def _read_pattern_features(path) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out[(rec["song_id"], int(rec["level_index"]))] = np.asarray(rec["features"], dtype=np.float64)
    return out


def _train_one(manifest, seqs_by_id, static_by_id, method, replicate, args) -> Path:
    split = manifest.splits[replicate]
    labels_by_id = manifest.pooled_level_labels()
    k = manifest.pooling.k
    train_ids = sorted(
        lid for lid in labels_by_id if lid[0] in split.train_song_ids and lid in seqs_by_id
    )
    overrides = {}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    if args.learning_rate is not None:
        overrides["learning_rate"] = args.learning_rate
    if args.window is not None:
        overrides["window"] = args.window
    config = model.TrainConfig(
        seed=pipeline.substream_seed(args.seed, "train", method, replicate), **overrides
    )
    labels = [labels_by_id[lid] for lid in train_ids]
    if method == "pattern":
        feats = np.stack([static_by_id[lid] for lid in train_ids])
        trained = model.train_pattern_model(feats, labels, k, train_config=config)
    else:
        seqs = [seqs_by_id[lid] for lid in train_ids]
        trained = model.train_sequence_model(seqs, labels, method, k, train_config=config)
    out = Path(args.out_dir, f"{method}_r{replicate}.pt")
    model.save_checkpoint(
        trained,
        out,
        extra={
            "replicate": replicate,
            "root_seed": args.seed,
            "dataset_name": manifest.dataset_name,
            "pooling": manifest.pooling.to_json(),
        },
    )
    print(f"{method} replicate {replicate}: final loss {trained.final_loss:.6f} -> {out}")
    return out


def cmd_train(args) -> int:
    manifest = pipeline.Manifest.load(args.manifest)
    if manifest.pooling is None or not manifest.splits:
        return _fail("BadManifest", "manifest needs pooling and splits first", EXIT_USAGE)
    seqs_by_id = {
        (s.song_id, s.level_index): s for s in features.read_feature_file(args.features)
    }
    static_by_id = _read_pattern_features(args.pattern_features) if args.pattern_features else {}
    if "pattern" in args.methods and not static_by_id:
        return _fail("BadManifest", "pattern training needs --pattern-features", EXIT_USAGE)
    replicates = args.replicates if args.replicates is not None else [args.replicate]
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)

    jobs = [(m, r) for m in args.methods for r in replicates]
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            futures = [
                pool.submit(_train_one, manifest, seqs_by_id, static_by_id, m, r, args)
                for m, r in jobs
            ]
            for f in futures:
                f.result()
    else:
        for m, r in jobs:
            _train_one(manifest, seqs_by_id, static_by_id, m, r, args)
    return EXIT_OK


def _predict_levels(trained, level_ids, seqs_by_id, static_by_id, root_seed, replicate):
    preds = {}
    for lid in level_ids:
        if trained.method == "pattern":
            preds[lid] = model.predict_pattern(trained, static_by_id[lid])
        else:
            seed = pipeline.substream_seed(
                root_seed, "ensemble", trained.method, replicate, lid[0], lid[1]
            )
            preds[lid] = model.predict_sequence(trained, seqs_by_id[lid], seed=seed)
    return preds


def cmd_eval(args) -> int:
    manifest = pipeline.Manifest.load(args.manifest)
    labels_by_id = manifest.pooled_level_labels()
    k = manifest.pooling.k
    seqs_by_id = {
        (s.song_id, s.level_index): s for s in features.read_feature_file(args.features)
    }
    static_by_id = _read_pattern_features(args.pattern_features) if args.pattern_features else {}
    metric_names = args.metrics.split(",")
    for name in metric_names:
        if name not in metrics.METRIC_FUNCTIONS:
            return _fail("BadMetric", f"unknown metric {name}", EXIT_USAGE)

    def eval_one(ckpt_path):
        trained = model.load_checkpoint(ckpt_path)
        sidecar = read_json(model.sidecar_path(ckpt_path))
        replicate = int(sidecar["replicate"])
        root_seed = int(sidecar["root_seed"])
        split = manifest.splits[replicate]
        test_ids = sorted(
            lid
            for lid in labels_by_id
            if lid[0] in split.test_song_ids
            and (lid in seqs_by_id if trained.method != "pattern" else lid in static_by_id)
        )
        preds = _predict_levels(trained, test_ids, seqs_by_id, static_by_id, root_seed, replicate)
        y_true = [labels_by_id[lid] for lid in test_ids]
        y_pred = [preds[lid] for lid in test_ids]
        row = {"method": trained.method, "replicate": replicate}
        for name in metric_names:
            row[name] = metrics.METRIC_FUNCTIONS[name](y_true, y_pred, k)
        return row

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(eval_one, args.checkpoints))
    else:
        rows = [eval_one(c) for c in args.checkpoints]

    by_method: dict[str, dict[str, list[float]]] = {}
    for row in rows:
        for name in metric_names:
            by_method.setdefault(name, {}).setdefault(row["method"], []).append(row[name])
    aggregate = {}
    for name in metric_names:
        summaries = metrics.aggregate_replicates(
            by_method[name], higher_is_better=metrics.METRIC_DIRECTIONS[name]
        )
        aggregate[name] = {
            m: {
                "mean": s.mean,
                "std": s.std,
                "best": s.best,
                "matches_best": s.matches_best,
            }
            for m, s in summaries.items()
        }
    report = {
        "dataset": manifest.dataset_name,
        "metrics": metric_names,
        "per_model": sorted(rows, key=lambda r: (r["method"], r["replicate"])),
        "aggregate": aggregate,
    }
    write_atomic_json(args.out, report)
    print(f"evaluated {len(rows)} checkpoints -> {args.out}")
    return EXIT_OK


def cmd_cross_eval(args) -> int:
    manifest_a = pipeline.Manifest.load(args.manifest_a)
    manifest_b = pipeline.Manifest.load(args.manifest_b)
    trained = model.load_checkpoint(args.checkpoint)
    sidecar = read_json(model.sidecar_path(args.checkpoint))
    root_seed = int(sidecar["root_seed"])
    replicate = int(sidecar["replicate"])
    k = manifest_a.pooling.k

    seqs_by_id = {
        (s.song_id, s.level_index): s for s in features.read_feature_file(args.features_b)
    }
    static_by_id = _read_pattern_features(args.pattern_features) if args.pattern_features else {}
    raw_by_id = {
        (song.song_id, lv.index): lv.raw_meter
        for song in manifest_b.songs
        for lv in song.levels
    }
    level_ids = sorted(
        lid
        for lid in raw_by_id
        if (lid in seqs_by_id if trained.method != "pattern" else lid in static_by_id)
    )
    y_true = pipeline.remap_cross_dataset([raw_by_id[lid] for lid in level_ids], manifest_a.pooling)
    preds = _predict_levels(trained, level_ids, seqs_by_id, static_by_id, root_seed, replicate)
    y_pred = [preds[lid] for lid in level_ids]

    report = {
        "train_dataset": manifest_a.dataset_name,
        "eval_dataset": manifest_b.dataset_name,
        "method": trained.method,
        "replicate": replicate,
        "levels": len(level_ids),
        "confusion_raw": metrics.confusion(y_true, y_pred, k, "raw").tolist(),
        "confusion_category_normalized": metrics.confusion(
            y_true, y_pred, k, "category_normalized"
        ).tolist(),
    }
    for name in ("mae", "rmse", "accuracy"):
        report[name] = metrics.METRIC_FUNCTIONS[name](y_true, y_pred, k)
    write_atomic_json(args.out, report)
    print(f"cross evaluation on {len(level_ids)} levels -> {args.out}")
    return EXIT_OK


def cmd_rank_pairs(args) -> int:
    manifest = pipeline.Manifest.load(args.manifest)
    labels_by_id = manifest.pooled_level_labels()
    if args.replicate is not None:
        split = manifest.splits[args.replicate]
        side = split.test_song_ids if args.side == "test" else split.train_song_ids
        labels_by_id = {lid: y for lid, y in labels_by_id.items() if lid[0] in side}
    pairs = pipeline.make_ranking_pairs(sorted(labels_by_id.items()))
    payload = [
        {
            "a": {"song_id": p.a[0], "level_index": p.a[1]},
            "b": {"song_id": p.b[0], "level_index": p.b[1]},
            "label": p.label.value,
        }
        for p in pairs
    ]
    write_atomic_json(args.out, {"dataset": manifest.dataset_name, "pairs": payload})
    print(f"{len(payload)} pairs -> {args.out}")
    return EXIT_OK


def _load_prediction_file(path) -> tuple[str, dict]:
    obj = read_json(path)
    preds = {
        (p["song_id"], int(p["level_index"])): int(p["label"]) for p in obj["predictions"]
    }
    return obj["source"], preds


def cmd_serve(args) -> int:
    manifest = pipeline.Manifest.load(args.manifest)
    sources: dict[str, dict] = {}
    if manifest.pooling is not None:
        sources[annotation.SOURCE_ORIGINAL] = manifest.pooled_level_labels()
    else:
        sources[annotation.SOURCE_ORIGINAL] = {
            (song.song_id, lv.index): lv.raw_meter
            for song in manifest.songs
            for lv in song.levels
        }
    for path in args.predictions:
        name, preds = _load_prediction_file(path)
        sources[name] = preds

    pairs = annotation.select_pairs(sources, budget=args.budget)

    from .server import AnnotationService, chart_preview, create_app

    levels = _load_pack_levels(manifest, args.pack)
    titles = {lid: title for lid, (_lv, _hdr, title) in levels.items()}
    previews = {lid: chart_preview(lv, hdr) for lid, (lv, hdr, _t) in levels.items()}

    state_dir = Path(args.state_dir) if args.state_dir else default_cache_dir() / "annotation"
    store = annotation.JudgmentStore(
        pairs,
        log_path=state_dir / "judgments.jsonl",
        snapshot_path=state_dir / "snapshot.json",
    )
    store.replay()
    service = AnnotationService(
        pairs=pairs,
        store=store,
        titles=titles,
        previews=previews,
        static_dir=Path(args.frontend) if args.frontend else None,
    )
    app = create_app(service)

    import uvicorn

    print(f"{len(pairs)} pairs selected; serving on port {args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stepmeter", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="parse a pack into a dataset manifest")
    p.add_argument("pack")
    p.add_argument("--out", required=True)
    p.add_argument("--dataset-name", default="dataset")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("features", help="extract per-step feature sequences")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pack", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pattern-out", default=None, help="also dump 16-dim static features")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("pool", help="pool rare meters into categories")
    p.add_argument("--manifest", required=True)
    p.add_argument("--threshold", type=float, default=0.02)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("split", help="draw Monte Carlo train/test splits")
    p.add_argument("--manifest", required=True)
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train one or more predictors")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--pattern-features", default=None)
    p.add_argument("--methods", nargs="+", choices=model.METHODS, required=True)
    p.add_argument("--replicate", type=int, default=0)
    p.add_argument("--replicates", type=int, nargs="+", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoints on their test splits")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--pattern-features", default=None)
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--metrics", default="wae,mae,rmse,accuracy,tpr")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cross-eval", help="evaluate a checkpoint on another dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest-a", required=True, help="training dataset manifest (pooling source)")
    p.add_argument("--manifest-b", required=True, help="evaluation dataset manifest")
    p.add_argument("--features-b", required=True)
    p.add_argument("--pattern-features", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cross_eval)

    p = sub.add_parser("rank-pairs", help="emit labeled level pairs for ranking")
    p.add_argument("--manifest", required=True)
    p.add_argument("--replicate", type=int, default=None)
    p.add_argument("--side", choices=("test", "train"), default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rank_pairs)

    p = sub.add_parser("serve", help="run the annotation service")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pack", required=True)
    p.add_argument("--predictions", nargs="*", default=[])
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--state-dir", default=None)
    p.add_argument("--frontend", default=None, help="directory with the built browser client")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (simfile.SimfileError, simfile.NoSongsFound) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_PARSE)
    except (pipeline.RejectionExhausted, model.MissingClass) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_INFEASIBLE)
    except model.DivergedLoss as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_DIVERGED)
    except (
        pipeline.AllMerged,
        annotation.NoDisagreements,
        features.EmptyChart,
        metrics.EmptyClass,
        metrics.NoStrictPairs,
        ValueError,
        OSError,
    ) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_ERROR)


if __name__ == "__main__":
    sys.exit(main())
