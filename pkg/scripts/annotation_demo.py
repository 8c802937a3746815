#!/usr/bin/env python3
"""Serve the annotation loop on a pack with two demo prediction sources.

Builds a manifest for the pack, fabricates two noisy prediction files so
the sources disagree (a real run would point --predictions at model
outputs from `stepmeter eval`), and starts the HTTP service.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from stepmeter.cli import main as cli
from stepmeter.jsonio import write_atomic_json
from stepmeter.pipeline import Manifest


def noisy_predictions(manifest: Manifest, name: str, rng) -> dict:
    labels = manifest.pooled_level_labels()
    k = manifest.pooling.k
    preds = []
    for (song_id, index), y in sorted(labels.items()):
        jitter = int(rng.integers(-1, 2))
        preds.append(
            {
                "song_id": song_id,
                "level_index": index,
                "label": int(np.clip(y + jitter, 1, k)),
            }
        )
    return {"source": name, "predictions": preds}


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--pack", required=True)
    parser.add_argument("--workdir", required=True)
    parser.add_argument("--port", type=int, default=8000)
    parser.add_argument("--budget", type=int, default=50)
    parser.add_argument("--frontend", default=None)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)
    manifest_path = work / "manifest.json"
    assert cli(["parse", args.pack, "--out", str(manifest_path)]) == 0
    assert cli([
        "pool", "--manifest", str(manifest_path), "--threshold", "0.02",
        "--out", str(manifest_path),
    ]) == 0

    manifest = Manifest.load(manifest_path)
    rng = np.random.default_rng(args.seed)
    prediction_paths = []
    for name in ("noisy_a", "noisy_b"):
        path = work / f"{name}.json"
        write_atomic_json(path, noisy_predictions(manifest, name, rng))
        prediction_paths.append(str(path))

    serve = [
        "serve", "--manifest", str(manifest_path), "--pack", args.pack,
        "--predictions", *prediction_paths,
        "--budget", str(args.budget), "--port", str(args.port),
        "--state-dir", str(work / "state"),
    ]
    if args.frontend:
        serve += ["--frontend", args.frontend]
    raise SystemExit(cli(serve))


if __name__ == "__main__":
    main()
