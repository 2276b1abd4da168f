"""Correlation metrics and Fisher-z confidence intervals."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import DegenerateSeries, InsufficientN

Z_95 = 1.959963984540054
CI_METHOD = "fisher-z (r = sqrt(R2), z = atanh r, +/- 1.96/sqrt(n-3), endpoints squared)"


def _pearson_r(x: Sequence[float], y: Sequence[float]) -> float:
    # single pass, Welford-style co-moment updates
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise DegenerateSeries(f"series lengths differ: {x.size} vs {y.size}")
    if x.size < 2:
        raise DegenerateSeries(f"need at least 2 points, got {x.size}")
    mx = my = sxx = syy = sxy = 0.0
    for k, (a, b) in enumerate(zip(x.tolist(), y.tolist()), start=1):
        dx = a - mx
        mx += dx / k
        dy = b - my
        my += dy / k
        sxx += dx * (a - mx)
        syy += dy * (b - my)
        sxy += dx * (b - my)
    if sxx <= 0.0 or syy <= 0.0:
        raise DegenerateSeries("constant series has no correlation")
    r = sxy / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def pearson_r2(pred: Sequence[float], actual: Sequence[float]) -> float:
    """Squared Pearson correlation between predictions and measurements."""
    r = _pearson_r(pred, actual)
    return r * r


def average_ranks(values: Sequence[float]) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64).ravel()
    order = np.argsort(v, kind="mergesort")
    ranks = np.empty(v.size)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_rho(pred: Sequence[float], actual: Sequence[float]) -> float:
    """Pearson correlation of average ranks (ties share the mean rank)."""
    return _pearson_r(average_ranks(pred), average_ranks(actual))


def fisher_interval(r: float, n: int) -> tuple[float, float]:
    if n < 4:
        raise InsufficientN(f"confidence interval needs n >= 4, got {n}")
    r = min(max(r, -1.0 + 1e-15), 1.0 - 1e-15)
    z = math.atanh(r)
    half = Z_95 / math.sqrt(n - 3)
    return math.tanh(z - half), math.tanh(z + half)


def r2_confidence_interval(r2: float, n: int) -> tuple[float, float]:
    """95% interval for R^2 via the Fisher transform of r = sqrt(R^2), clamped to [0, 1]."""
    if not 0.0 <= r2 <= 1.0:
        raise ValueError(f"r2 must lie in [0, 1], got {r2}")
    lo, hi = fisher_interval(math.sqrt(r2), n)
    lo2 = 0.0 if lo <= 0.0 else lo * lo
    hi2 = hi * hi if hi > 0.0 else 0.0
    return min(max(lo2, 0.0), 1.0), min(max(hi2, 0.0), 1.0)


def rho_confidence_interval(rho: float, n: int) -> tuple[float, float]:
    return fisher_interval(rho, n)
