"""Ordinal regression targets, losses, and decoders.

Labels are 1-based integers y in {1, ..., K}. Every head is scored with
the absolute cost |y_hat - y|. This module is the framework-free
reference for the target constructions and decode rules; the torch
training code mirrors these formulas exactly.

Heads
-----
classification
    Plain K-way softmax; decode argmax (ties to the smaller label).
regression
    Single scalar trained on MAE; decode round-half-away-from-zero,
    clamped to [1, K].
nnrank
    K-1 independent sigmoid outputs; the target for label y is y-1 ones
    followed by K-y zeros. Decode y_hat = i* + 1 where i* is the largest
    index (1-based) with p_i >= 0.5, or 0 when none reach 0.5.
redsvm
    One latent scalar g and K-1 ordered thresholds theta_k. Training
    minimizes the sum over k of logistic losses on the signed margins
    y^(k) (g - theta_k) with y^(k) = +1 if k < y else -1. Decode
    y_hat = 1 + #{k : g > theta_k}.
laplace
    Soft target t_i proportional to exp(-phi(y, i)) with phi the absolute
    distance by default; trained with cross entropy; decoded by minimum
    cross entropy against the candidate targets.
binomial
    Soft target over K+4 outcomes built from two binomials chosen so the
    target has mean y+1 and variance exactly 1 for every y and K; same
    cross-entropy training and decoding as laplace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class ZeroTargetEntry(Exception):
    """Cross entropy against a target with a zero where mass is needed."""


def check_label(y: int, k: int) -> None:
    if not 2 <= k:
        raise ValueError(f"need at least 2 categories, got {k}")
    if not 1 <= y <= k:
        raise ValueError(f"label {y} outside [1, {k}]")


def cost(y_hat: int, y: int) -> int:
    """Evaluation cost: absolute label distance."""
    return abs(int(y_hat) - int(y))


# ---------------------------------------------------------------------------
# nnrank

def nnrank_target(y: int, k: int) -> np.ndarray:
    check_label(y, k)
    target = np.zeros(k - 1, dtype=np.float64)
    target[: y - 1] = 1.0
    return target


def nnrank_decode(probabilities: Sequence[float]) -> int:
    """Largest 1-based index with p >= 0.5, plus one; 1 when none qualify."""
    best = 0
    for i, p in enumerate(probabilities, start=1):
        if p >= 0.5:
            best = i
    return best + 1


# ---------------------------------------------------------------------------
# redsvm

def redsvm_margin_signs(y: int, k: int) -> np.ndarray:
    """y^(k) = +1 for thresholds below the label, -1 at and above it."""
    check_label(y, k)
    return np.where(np.arange(1, k) < y, 1.0, -1.0)


def redsvm_loss(g: float, thresholds: Sequence[float], y: int) -> float:
    """Sum over thresholds of the logistic loss log(1 + exp(-y^(k)(g - theta_k)))."""
    thresholds = np.asarray(thresholds, dtype=np.float64)
    signs = redsvm_margin_signs(y, len(thresholds) + 1)
    margins = signs * (g - thresholds)
    return float(np.sum(np.logaddexp(0.0, -margins)))


def redsvm_decode(g: float, thresholds: Sequence[float]) -> int:
    return 1 + int(sum(1 for t in thresholds if g > t))


def redsvm_initial_thresholds(k: int) -> np.ndarray:
    """K-1 thresholds evenly spaced over [-1, 1]."""
    if k < 2:
        raise ValueError("need at least 2 categories")
    if k == 2:
        return np.zeros(1)
    return np.linspace(-1.0, 1.0, k - 1)


# ---------------------------------------------------------------------------
# soft labels

def absolute_distance(y: int, i: int) -> float:
    return abs(y - i)


def squared_distance(y: int, i: int) -> float:
    return (y - i) ** 2


def laplace_target(
    y: int, k: int, phi: Callable[[int, int], float] = absolute_distance
) -> np.ndarray:
    """t_i = exp(-phi(y, i)) / sum_j exp(-phi(y, j)) over i = 1..K."""
    check_label(y, k)
    weights = np.array([math.exp(-phi(y, i)) for i in range(1, k + 1)], dtype=np.float64)
    return weights / weights.sum()


@dataclass(frozen=True)
class BinomialParams:
    """Mixture-of-two-binomials parameters for one (y, K) pair.

    The target distributes mass over 0..n with n = K + 3 as the sum of
    independent draws from Binomial(mu, p1) and Binomial(n - mu, p2),
    with mu = y + 1. p1 and p2 are the unique probabilities that give
    the sum mean mu and variance exactly 1:

        p = mu / n
        alpha1 = sqrt((n - mu)^2 / n^2 - (n - mu) / (mu n)),  p1 = p + alpha1
        alpha2 = sqrt(mu^2 / n^2 - mu / ((n - mu) n)),        p2 = p - alpha2
    """

    n: int
    mu: int
    p1: float
    p2: float


def binomial_params(y: int, k: int) -> BinomialParams:
    check_label(y, k)
    n = k + 3
    mu = y + 1
    p = mu / n
    alpha1 = math.sqrt((n - mu) ** 2 / n**2 - (n - mu) / (mu * n))
    alpha2 = math.sqrt(mu**2 / n**2 - mu / ((n - mu) * n))
    return BinomialParams(n=n, mu=mu, p1=p + alpha1, p2=p - alpha2)


def _binomial_pmf(n: int, p: float) -> np.ndarray:
    # Coefficients come from an explicit Pascal row so the expansion
    # matches the textbook double sum term for term.
    coefs = np.array([math.comb(n, i) for i in range(n + 1)], dtype=np.float64)
    i = np.arange(n + 1)
    return coefs * np.power(p, i) * np.power(1.0 - p, n - i)


def binomial_target(y: int, k: int) -> np.ndarray:
    """Target pmf over outcomes 0..K+3 (length K+4) with mean y+1, variance 1.

    t_m = sum_i C(mu, i) p1^i (1-p1)^(mu-i) C(n-mu, m-i) p2^(m-i) (1-p2)^(n-mu-m+i),
    the convolution of the two binomial pmfs.
    """
    params = binomial_params(y, k)
    pmf = np.convolve(_binomial_pmf(params.mu, params.p1), _binomial_pmf(params.n - params.mu, params.p2))
    return pmf


def soft_target_table(method: str, k: int) -> np.ndarray:
    """Stacked targets for every candidate label: row y-1 is the target for y.

    Shape (K, K) for laplace, (K, K+4) for binomial.
    """
    if method == "laplace":
        return np.stack([laplace_target(y, k) for y in range(1, k + 1)])
    if method == "binomial":
        return np.stack([binomial_target(y, k) for y in range(1, k + 1)])
    raise ValueError(f"no soft target table for method {method!r}")


def cross_entropy(f: np.ndarray, t: np.ndarray) -> float:
    """-sum_i f_i log t_i, demanding t_i > 0 wherever f_i > 0."""
    f = np.asarray(f, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    mask = f > 0
    if np.any(t[mask] <= 0):
        raise ZeroTargetEntry("target has zero mass where the prediction has support")
    out = np.zeros_like(f)
    out[mask] = f[mask] * np.log(t[mask])
    return float(-out.sum())


def softlabel_decode(f: np.ndarray, table: np.ndarray) -> int:
    """Label whose target minimizes cross entropy with f; ties to the smaller."""
    scores = np.array([cross_entropy(f, table[i]) for i in range(table.shape[0])])
    return int(np.argmin(scores)) + 1


# ---------------------------------------------------------------------------
# plain heads

def classification_decode(probabilities: Sequence[float]) -> int:
    """Argmax, ties resolved to the smaller label."""
    return int(np.argmax(np.asarray(probabilities))) + 1


def regression_decode(value: float, k: int) -> int:
    """Round half away from zero, then clamp to [1, K]."""
    rounded = math.floor(abs(value) + 0.5) * (1 if value >= 0 else -1)
    return max(1, min(k, rounded))
