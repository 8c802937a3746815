"""Deterministic JSON output and atomic file writes.

All artifacts written by the toolkit go through these helpers so that
identical inputs produce byte-identical files: keys sorted, reals
pre-rounded to 9 significant digits, writes staged to a temp file in the
target directory and renamed into place.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path


def round9(value: float) -> float:
    """Round to 9 significant digits (non-finite values pass through)."""
    value = float(value)
    if not math.isfinite(value):
        return value
    return float(f"{value:.9g}")


def _round_tree(obj):
    if isinstance(obj, float):
        return round9(obj)
    if isinstance(obj, dict):
        return {k: _round_tree(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_tree(v) for v in obj]
    return obj


def dumps_canonical(obj) -> str:
    """One-line JSON with sorted keys and 9-significant-digit reals."""
    return json.dumps(_round_tree(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_atomic_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_atomic_bytes(path, blob: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_atomic_json(path, obj) -> None:
    write_atomic_text(path, dumps_canonical(obj) + "\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
