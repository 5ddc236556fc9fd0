"""Shared statistical helpers: correlations, proportions, intervals."""

from __future__ import annotations

import math

import numpy as np
from scipy import stats


def pearson_with_p(x, y) -> tuple[float, float, int]:
    """Pearson r with a two-sided p-value from the t transform.

    Returns (nan, nan, n) when fewer than 3 points or either side has zero
    variance.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(x) & np.isfinite(y)
    x, y = x[ok], y[ok]
    n = x.size
    if n < 3:
        return math.nan, math.nan, n
    sx = x.std()
    sy = y.std()
    if sx == 0.0 or sy == 0.0:
        return math.nan, math.nan, n
    r = float(np.mean((x - x.mean()) * (y - y.mean())) / (sx * sy))
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0, n
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    p = 2.0 * float(stats.t.sf(abs(t), n - 2))
    return r, p, n


def wilson_interval(successes: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        return 0.0, 1.0
    z = float(stats.norm.ppf(0.5 + level / 2.0))
    phat = successes / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def two_proportion_p(k1: int, n1: int, k2: int, n2: int) -> float:
    """Two-sided test of equal proportions.

    Pooled-variance z-test; falls back to Fisher's exact test when any cell
    of the 2x2 table is below 5.
    """
    if n1 == 0 or n2 == 0:
        raise ValueError("empty group in proportion test")
    table = np.array([[k1, n1 - k1], [k2, n2 - k2]])
    if table.min() < 5:
        return float(stats.fisher_exact(table)[1])
    pooled = (k1 + k2) / (n1 + n2)
    se = math.sqrt(pooled * (1 - pooled) * (1 / n1 + 1 / n2))
    if se == 0.0:
        return 1.0
    z = (k1 / n1 - k2 / n2) / se
    return 2.0 * float(stats.norm.sf(abs(z)))


def welch_p(a, b) -> float:
    """Two-sided Welch t-test p-value; nan when it cannot be computed."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        return math.nan
    if a.std() == 0.0 and b.std() == 0.0:
        return 1.0 if a.mean() == b.mean() else 0.0
    return float(stats.ttest_ind(a, b, equal_var=False).pvalue)
