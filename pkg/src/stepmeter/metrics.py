"""Evaluation metrics for ordinal difficulty predictions.

The headline metric is the class-weighted absolute error (WAE): a mean
absolute error where each category contributes equally regardless of
how many test levels it holds. On a balanced test set WAE and MAE
coincide exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .pipeline import PairOrder


class EmptyClass(Exception):
    """WAE asked to weight a category with no test examples."""


class NoStrictPairs(Exception):
    """Strict-only agreement with no strictly ordered pairs left."""


def _as_labels(y_true, y_pred, k: int) -> tuple[np.ndarray, np.ndarray]:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError("y_true and y_pred must be 1-d and the same length")
    if y_true.size == 0:
        raise ValueError("no records to score")
    for arr, name in ((y_true, "y_true"), (y_pred, "y_pred")):
        if arr.min() < 1 or arr.max() > k:
            raise ValueError(f"{name} outside [1, {k}]")
    return y_true, y_pred


def wae(y_true, y_pred, k: int) -> float:
    """(1/K) sum_y (1/w_y) sum_{i: y_i = y} |y_i - f(x_i)|.

    w_y is the number of test records with true label y; every category
    must be represented. Raises :class:`EmptyClass` otherwise.
    """
    y_true, y_pred = _as_labels(y_true, y_pred, k)
    total = 0.0
    for label in range(1, k + 1):
        mask = y_true == label
        w = int(mask.sum())
        if w == 0:
            raise EmptyClass(f"no test records with label {label}")
        total += float(np.abs(y_true[mask] - y_pred[mask]).sum()) / w
    return total / k


def mae(y_true, y_pred, k: int) -> float:
    y_true, y_pred = _as_labels(y_true, y_pred, k)
    return float(np.abs(y_true - y_pred).mean())


def rmse(y_true, y_pred, k: int) -> float:
    y_true, y_pred = _as_labels(y_true, y_pred, k)
    return float(np.sqrt(np.square(y_true - y_pred, dtype=np.float64).mean()))


def accuracy(y_true, y_pred, k: int) -> float:
    y_true, y_pred = _as_labels(y_true, y_pred, k)
    return float((y_true == y_pred).mean())


def tpr(y_true, y_pred, k: int) -> float:
    """Macro-averaged recall over categories.

    Categories with no test records are skipped with a warning instead of
    poisoning the average.
    """
    y_true, y_pred = _as_labels(y_true, y_pred, k)
    recalls = []
    for label in range(1, k + 1):
        mask = y_true == label
        if not mask.any():
            warnings.warn(f"tpr: no test records with label {label}; skipped", stacklevel=2)
            continue
        recalls.append(float((y_pred[mask] == label).mean()))
    if not recalls:
        raise ValueError("no category had test records")
    return float(np.mean(recalls))


def confusion(y_true, y_pred, k: int, normalize: str = "raw") -> np.ndarray:
    """K x K confusion matrix, rows = true label, columns = predicted.

    ``normalize="category_normalized"`` divides each row by its support,
    leaving all-zero rows for absent categories.
    """
    y_true, y_pred = _as_labels(y_true, y_pred, k)
    mat = np.zeros((k, k), dtype=np.float64)
    for t, p in zip(y_true, y_pred):
        mat[t - 1, p - 1] += 1.0
    if normalize == "raw":
        return mat
    if normalize == "category_normalized":
        sums = mat.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore"):
            out = np.where(sums > 0, mat / np.where(sums > 0, sums, 1.0), 0.0)
        return out
    raise ValueError(f"unknown normalize mode {normalize!r}")


def average_confusions(mats: Sequence[np.ndarray]) -> np.ndarray:
    """Element-wise mean of equally shaped confusion matrices."""
    if not mats:
        raise ValueError("no matrices to average")
    stack = np.stack([np.asarray(m, dtype=np.float64) for m in mats])
    return stack.mean(axis=0)


# ---------------------------------------------------------------------------
# pairwise orderings

def agreement(
    predicted: Sequence[PairOrder],
    reference: Sequence[PairOrder],
    mode: str = "strict_only",
) -> float:
    """Fraction of pairs ordered the same way by prediction and reference.

    ``strict_only`` drops pairs where either side says Equal and scores
    the rest two-way; raises :class:`NoStrictPairs` when nothing is left.
    ``full`` scores the three-way decision on every pair.
    """
    if len(predicted) != len(reference):
        raise ValueError("orderings must align")
    if not predicted:
        raise ValueError("no pairs to score")
    if mode == "full":
        hits = sum(1 for p, r in zip(predicted, reference) if p == r)
        return hits / len(predicted)
    if mode != "strict_only":
        raise ValueError(f"unknown agreement mode {mode!r}")
    kept = [
        (p, r)
        for p, r in zip(predicted, reference)
        if p is not PairOrder.EQUAL and r is not PairOrder.EQUAL
    ]
    if not kept:
        raise NoStrictPairs("every pair was dropped by the strict filter")
    hits = sum(1 for p, r in kept if p == r)
    return hits / len(kept)


def concordance_accuracy(
    predicted: Sequence[PairOrder],
    support_a_less: Sequence[float],
) -> float:
    """Mean human support for the model's strict orderings.

    ``support_a_less[i]`` is the fraction of judgments holding that pair
    i's first level is the easier one; a prediction scores that fraction
    when it says A_LESS and the complement when it says B_LESS. Reversing
    every prediction therefore yields exactly 1 minus the score. Equal
    predictions must be filtered out upstream.
    """
    if len(predicted) != len(support_a_less):
        raise ValueError("predictions and supports must align")
    if not predicted:
        raise ValueError("no pairs to score")
    total = 0.0
    for order, r in zip(predicted, support_a_less):
        if order is PairOrder.EQUAL:
            raise ValueError("equal predictions have no concordance; filter them first")
        if not 0.0 <= r <= 1.0:
            raise ValueError(f"support {r} outside [0, 1]")
        total += r if order is PairOrder.A_LESS else 1.0 - r
    return total / len(predicted)


# ---------------------------------------------------------------------------
# aggregation across replicates

@dataclass(frozen=True)
class MetricSummary:
    mean: float
    std: float
    best: bool
    matches_best: bool  # not separable from the best at the 5% level


def aggregate_replicates(
    values_by_method: Mapping[str, Sequence[float]],
    higher_is_better: bool = False,
) -> dict[str, MetricSummary]:
    """Mean and sample std per method, with significance flags.

    The best method by mean gets ``best=True``. Every method whose values
    are statistically indistinguishable from the best under a two-sample
    t-test at the 5% level gets ``matches_best=True`` (the best itself
    always does).
    """
    if not values_by_method:
        raise ValueError("nothing to aggregate")
    means = {m: float(np.mean(v)) for m, v in values_by_method.items()}
    stds = {
        m: float(np.std(v, ddof=1)) if len(values_by_method[m]) > 1 else 0.0
        for m, v in values_by_method.items()
    }
    pick = max if higher_is_better else min
    best_method = pick(sorted(means), key=lambda m: means[m])

    out = {}
    for method, values in values_by_method.items():
        if method == best_method:
            matches = True
        else:
            a = np.asarray(values, dtype=np.float64)
            b = np.asarray(values_by_method[best_method], dtype=np.float64)
            if len(a) < 2 or len(b) < 2 or (a.std() == 0 and b.std() == 0):
                matches = bool(np.isclose(a.mean(), b.mean()))
            else:
                _, p = stats.ttest_ind(a, b, equal_var=True)
                matches = bool(p >= 0.05)
        out[method] = MetricSummary(
            mean=means[method],
            std=stds[method],
            best=method == best_method,
            matches_best=matches,
        )
    return out


METRIC_DIRECTIONS = {
    "wae": False,
    "mae": False,
    "rmse": False,
    "accuracy": True,
    "tpr": True,
}

METRIC_FUNCTIONS = {
    "wae": wae,
    "mae": mae,
    "rmse": rmse,
    "accuracy": accuracy,
    "tpr": tpr,
}
