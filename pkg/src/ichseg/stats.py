"""Self-contained statistics kernels: tie-aware ROC AUC, the regularized
incomplete beta function, Student-t tail probabilities, and the paired
two-sample t-test.

The t-distribution CDF is evaluated through the incomplete beta continued
fraction (modified Lentz scheme), accurate to well below 1e-9, so no stats
library is needed at runtime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class StatsError(ValueError):
    pass


def tied_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned their average rank."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def roc_auc(scores, labels) -> float:
    """ROC AUC via the Mann-Whitney rank statistic with tie handling.

    Equals P(score+ > score-) + 0.5 * P(score+ = score-) over all
    positive/negative pairs.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise StatsError("scores and labels must be equal-length 1D arrays")
    if not np.isfinite(scores).all():
        raise StatsError("scores must be finite")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise StatsError(f"need both classes present, got {n_pos} positive / {n_neg} negative")
    ranks = tied_ranks(scores)
    rank_sum = ranks[labels].sum()
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise StatsError(f"incomplete beta continued fraction failed to converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if not (a > 0 and b > 0):
        raise StatsError(f"betainc requires a, b > 0, got a={a}, b={b}")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_tailed(t: float, df: float) -> float:
    """Two-tailed Student-t tail probability P(|T| >= |t|)."""
    if df <= 0:
        raise StatsError(f"degrees of freedom must be > 0, got {df}")
    if t == 0.0:
        return 1.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    df: int
    degenerate: bool = False  # zero-variance differences


def paired_ttest(a, b) -> TTestResult:
    """Paired two-sample t-test on aligned per-item values.

    Zero-variance differences are flagged degenerate: p=1 when the mean
    difference is 0, otherwise p=0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise StatsError("paired samples must be equal-length 1D arrays")
    n = len(a)
    if n < 2:
        raise StatsError(f"need n >= 2 pairs, got {n}")
    d = a - b
    mean = d.mean()
    sd = d.std(ddof=1)
    df = n - 1
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(t=0.0, p=1.0, df=df, degenerate=True)
        return TTestResult(t=math.copysign(math.inf, mean), p=0.0, df=df, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t=t, p=t_sf_two_tailed(t, df), df=df)


def mean_stderr(values) -> tuple[float, float | None]:
    """Sample mean and standard error (n-1 denominator); stderr is None for n < 2."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or len(values) == 0:
        raise StatsError("mean_stderr needs a nonempty 1D array")
    mean = float(values.mean())
    if len(values) < 2:
        return mean, None
    return mean, float(values.std(ddof=1) / math.sqrt(len(values)))
