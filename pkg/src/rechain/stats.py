"""Binomial confidence limits and other small estimators."""

from __future__ import annotations

import math

import numpy as np
from scipy import stats


def cp_upper(k, n, level: float = 0.99):
    """One-sided Clopper-Pearson upper limit for ``k`` successes in ``n`` trials."""
    k = np.asarray(k)
    out = np.where(k >= n, 1.0, stats.beta.ppf(level, k + 1, np.maximum(n - k, 1)))
    return float(out) if out.ndim == 0 else out


def cp_interval(k, n, level: float = 0.99):
    """Two-sided Clopper-Pearson interval ``(lo, hi)``."""
    k = np.asarray(k)
    a = (1.0 - level) / 2.0
    lo = np.where(k <= 0, 0.0, stats.beta.ppf(a, np.maximum(k, 1), n - k + 1))
    hi = np.where(k >= n, 1.0, stats.beta.ppf(1 - a, k + 1, np.maximum(n - k, 1)))
    if lo.ndim == 0:
        return float(lo), float(hi)
    return lo, hi


def dkw_epsilon(n: int, level: float = 0.99) -> float:
    """Dvoretzky-Kiefer-Wolfowitz band half-width for an empirical CDF of ``n`` draws."""
    return math.sqrt(math.log(2.0 / (1.0 - level)) / (2.0 * n))


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x`` (positive entries only)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0) & np.isfinite(y)
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


def jackknife_lp(samples, p: float):
    """Bias-corrected estimate of ``E^{1/p}|X|^p`` and its jackknife standard error."""
    a = np.abs(np.asarray(samples, dtype=float)) ** p
    n = a.size
    full = a.mean() ** (1.0 / p)
    if n < 2:
        return float(full), float("nan")
    loo = ((a.sum() - a) / (n - 1)) ** (1.0 / p)
    corrected = n * full - (n - 1) * loo.mean()
    se = math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    return float(max(corrected, 0.0)), float(se)
