#!/usr/bin/env python3
"""End-to-end experiment on the synthetic pack, via the CLI subcommands.

Generates the pack, builds the manifest, draws Monte Carlo splits, trains
every method over the requested replicates, and prints the aggregate
metric table from the evaluation report.
"""

import argparse
import json
import sys
from pathlib import Path

from stepmeter.cli import main as cli
from stepmeter.model import METHODS
from stepmeter.synthetic import generate_pack

TRAIN_OVERRIDES = [
    "--epochs", "60",
    "--batch-size", "24",
    "--learning-rate", "2e-3",
]


def run(argv) -> int:
    code = cli(argv)
    if code != 0:
        print(f"command failed ({code}): {' '.join(argv)}", file=sys.stderr)
        sys.exit(code)
    return code


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", required=True)
    parser.add_argument("--songs", type=int, default=15)
    parser.add_argument("--replicates", type=int, default=10)
    parser.add_argument("--seed", type=int, default=3)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--methods", nargs="+", default=list(METHODS), choices=METHODS)
    args = parser.parse_args()

    work = Path(args.workdir)
    pack = work / "pack"
    generate_pack(pack, songs=args.songs, seed=args.seed)
    manifest = work / "manifest.json"

    run(["parse", str(pack), "--out", str(manifest), "--dataset-name", "synthetic"])
    run(["pool", "--manifest", str(manifest), "--threshold", "0.02", "--out", str(manifest)])
    run([
        "split", "--manifest", str(manifest), "--replicates", str(args.replicates),
        "--seed", str(args.seed), "--out", str(manifest),
    ])
    run([
        "features", "--manifest", str(manifest), "--pack", str(pack),
        "--out", str(work / "features.jsonl"), "--pattern-out", str(work / "pattern.jsonl"),
    ])
    run([
        "train", "--manifest", str(manifest), "--features", str(work / "features.jsonl"),
        "--pattern-features", str(work / "pattern.jsonl"),
        "--methods", *args.methods,
        "--replicates", *[str(r) for r in range(args.replicates)],
        "--seed", str(args.seed), "--jobs", str(args.jobs),
        "--out-dir", str(work / "models"), *TRAIN_OVERRIDES,
    ])
    checkpoints = sorted(str(p) for p in (work / "models").glob("*.pt"))
    run([
        "eval", "--manifest", str(manifest), "--features", str(work / "features.jsonl"),
        "--pattern-features", str(work / "pattern.jsonl"),
        "--checkpoints", *checkpoints, "--jobs", str(args.jobs),
        "--out", str(work / "report.json"),
    ])

    report = json.loads((work / "report.json").read_text())
    print(f"\n{'method':<16}" + "".join(f"{m:>12}" for m in report["metrics"]))
    methods = sorted(report["aggregate"][report["metrics"][0]])
    for method in methods:
        cells = []
        for metric in report["metrics"]:
            s = report["aggregate"][metric][method]
            star = "*" if s["best"] else ("+" if s["matches_best"] else " ")
            cells.append(f"{s['mean']:.3f}±{s['std']:.3f}{star}")
        print(f"{method:<16}" + "".join(f"{c:>12}" for c in cells))
    print("\n* best mean, + statistically indistinguishable from best")


if __name__ == "__main__":
    main()
