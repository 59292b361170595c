"""Convergence-rate functionals built from certificate and tail data.

With ``g`` the tail growth map and ``ell`` the tail probabilities:

* ``r1(t) = sum_{k>=t} K(g(k)) / alpha(g(k)) * exp(-k alpha(g(k)) lam(g(k)) / 2)``
* ``r2(t) = sum_{k>=t} K(g(k+1)) / (alpha^2 lam)(g(k+1)) * sqrt(ell(k))``
* ``r3(t) = sum_{k>=t} exp(-k alpha(g(k)) lam(g(k)) / 2)``
* ``r4(t) = sum_{k>=t} ell(k)``
* ``pi(t) = |ln lam(g(t))| / (alpha(g(t)) lam(g(t)))``

Infinite sums are truncated adaptively.  Divergence is never decided, only
flagged as numerical evidence.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .certificates import DriftCertificate, MinorizationCertificate, RadiusFactor
from .envtail import TailBound
from .errors import EvaluationError, HypothesisFailure, InvalidInput
from .stats import loglog_slope


@dataclass(frozen=True)
class RateInputs:
    drift: DriftCertificate
    minor: MinorizationCertificate
    tail: TailBound


class RateStatus(enum.Enum):
    CONVERGED = "converged"
    DIVERGENT = "divergent"
    INCONCLUSIVE = "inconclusive"
    EXACT = "exact"


@dataclass(frozen=True)
class TruncationPolicy:
    """Stopping and divergence rules for the series.

    Summation stops at the first term below ``term_tol * (1 + partial sum)``
    whose preceding ``ratio_window`` terms certify a decay ratio ``q < 1``;
    the remainder is bounded by a geometric or power-law majorant fitted on
    that window.  Divergence evidence: ``probation`` consecutive
    non-decreasing positive terms, a partial sum above ``overflow``, or a
    local power-law exponent at most 1 and not increasing over two
    consecutive dyadic ranges beyond ``probation``.
    """

    term_tol: float = 1e-14
    max_terms: int = 50_000_000
    ratio_window: int = 16
    certify: bool = True
    probation: int = 10_000
    overflow: float = 1e12
    first_chunk: int = 1024
    max_chunk: int = 1 << 20


DEFAULT_POLICY = TruncationPolicy()


@dataclass(frozen=True)
class RateReport:
    name: str
    t: int
    value: float
    terms_used: int
    tail_bound: Optional[float]
    divergence_flag: bool
    status: RateStatus
    note: str = ""


# ---------------------------------------------------------------------------
# terms


def _eval(fn, k):
    with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
        return np.asarray(fn(k), dtype=float)


def _composed(inputs: RateInputs, k):
    n = np.asarray(inputs.tail.g_at(k))
    return (
        _eval(inputs.drift.K, n),
        _eval(inputs.minor.alpha, n),
        _eval(inputs.drift.lam, n),
    )


def term_function(inputs: RateInputs, name: str) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorized ``k -> a_k`` for ``name`` in ``{"r1", "r2", "r3", "r4"}``."""

    # r1 and r2 are evaluated in log space: floored alpha makes the prefactor
    # overflow, and inf * 0 must resolve to the vanishing factor, not NaN.
    def r1(k):
        K, a, lam = _composed(inputs, k)
        with np.errstate(over="ignore", under="ignore", divide="ignore"):
            return np.exp(np.log(K) - np.log(a) - k * a * lam / 2.0)

    def r2(k):
        K, a, lam = _composed(inputs, k + 1)
        ell = np.asarray(inputs.tail.ell_at(k), dtype=float)
        with np.errstate(over="ignore", under="ignore", divide="ignore"):
            return np.exp(np.log(K) + 0.5 * np.log(ell) - 2.0 * np.log(a) - np.log(lam))

    def r3(k):
        _, a, lam = _composed(inputs, k)
        with np.errstate(under="ignore"):
            return np.exp(-k * a * lam / 2.0)

    def r4(k):
        return np.asarray(inputs.tail.ell_at(k), dtype=float)

    table = {"r1": r1, "r2": r2, "r3": r3, "r4": r4}
    if name not in table:
        raise InvalidInput(f"unknown rate functional {name!r}")
    return table[name]


# ---------------------------------------------------------------------------
# summation engine


@dataclass
class _TailSum:
    value: float
    terms_used: int
    tail_bound: Optional[float]
    status: RateStatus
    note: str


def _run_lengths(flags: np.ndarray, carry: int):
    """Longest run of True in ``flags`` given ``carry`` Trues before it; returns (longest, new carry)."""
    breaks = np.flatnonzero(~flags)
    if breaks.size == 0:
        run = carry + flags.size
        return run, run
    longest = carry + int(breaks[0])
    if breaks.size > 1:
        longest = max(longest, int(np.max(np.diff(breaks))) - 1)
    tail = flags.size - 1 - int(breaks[-1])
    return max(longest, tail), tail


def _majorant(window_terms: np.ndarray, window_k: np.ndarray):
    """Remainder bound after the last window term, or None when no decay is certified."""
    a = window_terms
    last = a[-1]
    if last == 0.0:
        return 0.0 if np.all(a[1:] <= a[:-1]) else None
    prev = a[:-1]
    if np.any(prev == 0.0):
        return None
    q = float(np.max(a[1:] / prev))
    if not q < 1.0:
        return None
    geo = last * q / (1.0 - q)
    # power-law majorant a_j <= a_k (k/j)^p, valid when the local exponent exceeds 1
    if a[0] > 0 and window_k[0] > 0:
        p = -math.log(last / a[0]) / math.log(window_k[-1] / window_k[0])
        if p <= 1.0:
            return None
        poly = last * window_k[-1] / (p - 1.0)
        return max(geo, poly)
    return geo


def _sum_tail(term_fn, t0: int, policy: TruncationPolicy) -> _TailSum:
    """Sum ``a_k`` for ``k >= t0`` under ``policy``."""
    w = policy.ratio_window
    total = 0.0
    comp = 0.0  # Neumaier compensation across chunks
    k = int(t0)
    used = 0
    chunk = policy.first_chunk
    prev_terms = np.empty(0)
    prev_k = np.empty(0)
    carry_run = 0
    last_term = None
    exponents = {}
    next_dyadic = 1 << max(int(math.ceil(math.log2(max(2 * policy.probation, 2)))), 1)
    while used < policy.max_terms:
        size = min(chunk, policy.max_terms - used)
        ks = np.arange(k, k + size, dtype=np.int64)
        a = term_fn(ks)
        if np.any(np.isnan(a)):
            bad = int(ks[np.isnan(a)][0])
            raise EvaluationError(f"series term is NaN at k = {bad}")
        if np.any(np.isinf(a)):
            return _TailSum(math.inf, used, None, RateStatus.DIVERGENT, "infinite term (numerical evidence of divergence)")
        cum = (total + comp) + np.cumsum(a)
        # stopping candidates
        cand = np.flatnonzero(a < policy.term_tol * (1.0 + cum))
        if cand.size:
            all_terms = np.concatenate((prev_terms, a))
            all_k = np.concatenate((prev_k, ks.astype(float)))
            offset = prev_terms.size
            for i in cand[:64]:
                j = offset + i
                if policy.certify:
                    if j + 1 < w:
                        continue
                    bound = _majorant(all_terms[j + 1 - w : j + 1], all_k[j + 1 - w : j + 1])
                    if bound is None:
                        continue
                else:
                    bound = None
                part = math.fsum(a[: i + 1].tolist())
                value = _neumaier_add(total, comp, part)
                if bound is not None:
                    value += bound
                return _TailSum(value, used + i + 1, bound, RateStatus.CONVERGED, "")
        part = math.fsum(a.tolist())
        total, comp = _neumaier_pair(total, comp, part)
        used += size
        k += size
        if total + comp > policy.overflow:
            return _TailSum(total + comp, used, None, RateStatus.DIVERGENT,
                            f"partial sum exceeded {policy.overflow:g} (numerical evidence of divergence)")
        seq = a if last_term is None else np.concatenate(([last_term], a))
        nondecreasing = (seq[1:] >= seq[:-1]) & (seq[1:] > 0)
        longest, carry_run = _run_lengths(nondecreasing, carry_run)
        last_term = a[-1]
        if longest >= policy.probation:
            return _TailSum(total + comp, used, None, RateStatus.DIVERGENT,
                            f"terms non-decreasing over {policy.probation} consecutive indices (numerical evidence of divergence)")
        while k >= next_dyadic:
            lo, hi = term_fn(np.array([next_dyadic // 2, next_dyadic], dtype=np.int64))
            if lo > 0 and hi > 0:
                exponents[next_dyadic] = -math.log(hi / lo) / math.log(2.0)
            prev_exp = exponents.get(next_dyadic // 2)
            cur = exponents.get(next_dyadic)
            if prev_exp is not None and cur is not None and cur <= 1.0 and prev_exp <= 1.0 and cur <= prev_exp + 1e-3:
                return _TailSum(total + comp, used, None, RateStatus.DIVERGENT,
                                f"terms decay no faster than 1/k near k = {next_dyadic} (numerical evidence of divergence)")
            next_dyadic *= 2
        prev_terms = a[-w:]
        prev_k = ks[-w:].astype(float)
        chunk = min(chunk * 2, policy.max_chunk)
    return _TailSum(total + comp, used, None, RateStatus.INCONCLUSIVE,
                    f"N_max = {policy.max_terms} terms exhausted without meeting the tolerance")


def _neumaier_pair(s, c, x):
    t = s + x
    if abs(s) >= abs(x):
        c += (s - t) + x
    else:
        c += (x - t) + s
    return t, c


def _neumaier_add(s, c, x):
    t, c = _neumaier_pair(s, c, x)
    return t + c


def _block_sum(term_fn, lo: int, hi: int, step: int = 1 << 22) -> float:
    parts = []
    for s in range(lo, hi, step):
        a = term_fn(np.arange(s, min(hi, s + step), dtype=np.int64))
        if not np.all(np.isfinite(a)):
            return math.inf
        parts.append(math.fsum(a.tolist()))
    try:
        return math.fsum(parts)
    except OverflowError:
        return math.inf


def rate_table(inputs: RateInputs, name: str, t_grid, policy: TruncationPolicy = DEFAULT_POLICY) -> list:
    """Evaluate one functional on a grid of start indices.

    The remainder from the largest ``t`` is summed once; smaller ``t`` add the
    exact finite blocks in between, so values are monotone in ``t`` by
    construction.
    """
    ts = sorted({int(t) for t in np.atleast_1d(t_grid)})
    if ts[0] < 0:
        raise InvalidInput("start index t must be nonnegative")
    fn = term_function(inputs, name)
    tail = _sum_tail(fn, ts[-1], policy)
    out = {ts[-1]: tail.value}
    for lo, hi in zip(reversed(ts[:-1]), reversed(ts[1:])):
        out[lo] = _block_sum(fn, lo, hi) + out[hi] if math.isfinite(out[hi]) else math.inf
    reports = []
    for t in ts:
        reports.append(RateReport(
            name=name,
            t=t,
            value=float(out[t]),
            terms_used=tail.terms_used + (ts[-1] - t),
            tail_bound=tail.tail_bound,
            divergence_flag=tail.status is RateStatus.DIVERGENT,
            status=tail.status,
            note=tail.note,
        ))
    return reports


def _single_or_list(inputs, name, t, policy):
    if np.ndim(t) == 0:
        return rate_table(inputs, name, [int(t)], policy)[0]
    return rate_table(inputs, name, t, policy)


def rate_r1(inputs: RateInputs, t, policy: TruncationPolicy = DEFAULT_POLICY):
    """``r1`` from index ``t`` (a grid of ``t`` returns a list of reports)."""
    return _single_or_list(inputs, "r1", t, policy)


def rate_r2(inputs: RateInputs, t, policy: TruncationPolicy = DEFAULT_POLICY):
    return _single_or_list(inputs, "r2", t, policy)


def rate_r3(inputs: RateInputs, t, policy: TruncationPolicy = DEFAULT_POLICY):
    return _single_or_list(inputs, "r3", t, policy)


def rate_r4(inputs: RateInputs, t, policy: TruncationPolicy = DEFAULT_POLICY):
    return _single_or_list(inputs, "r4", t, policy)


def pi_values(inputs: RateInputs, t) -> np.ndarray:
    """Vectorized ``pi(t)``; entries with ``lam = 1`` are 0."""
    K, a, lam = _composed(inputs, np.asarray(t, dtype=np.int64))
    with np.errstate(divide="ignore"):
        val = np.abs(np.log(lam)) / (a * lam)
    return np.where(lam >= 1.0, 0.0, val)


def rate_pi(inputs: RateInputs, t: int) -> RateReport:
    """``pi(t) = |ln lam(g(t))| / (alpha(g(t)) lam(g(t)))``, exact."""
    if t < 0:
        raise InvalidInput("t must be nonnegative")
    n = inputs.tail.g_at(int(t))
    lam = float(inputs.drift.lam(n))
    if lam >= 1.0:
        return RateReport("pi", int(t), 0.0, 0, None, False, RateStatus.EXACT,
                          "lambda(g(t)) = 1: |ln lambda| vanishes, value set to 0")
    alpha = float(inputs.minor.alpha(n))
    return RateReport("pi", int(t), abs(math.log(lam)) / (alpha * lam), 0, None, False, RateStatus.EXACT)


# ---------------------------------------------------------------------------
# theorem-level bounds


class BoundKind(enum.Enum):
    """Which rate sum controls which distance.

    ``WEIGHTED``: the (1+V)-weighted distance, controlled by ``r1 + r2``.
    ``TOTAL_VARIATION``: total variation, controlled by ``r3 + r4``.
    """

    WEIGHTED = "weighted"
    TOTAL_VARIATION = "total_variation"


_PARTS = {BoundKind.WEIGHTED: ("r1", "r2"), BoundKind.TOTAL_VARIATION: ("r3", "r4")}

UNKNOWN_CONSTANT_NOTE = "raw rate sum; the multiplicative constant C is unknown and not estimated"


def theorem_bound(inputs: RateInputs, kind: BoundKind, t, policy: TruncationPolicy = DEFAULT_POLICY):
    """Raw rate sum bounding the distance to the limit law at time ``t``.

    Both functionals are first evaluated from ``t = 0``; a divergent one
    raises :class:`HypothesisFailure`.  Accepts a single ``t`` or a grid.

    Radius factor EIGHT is accepted: minorization on the larger small set
    implies it on the smaller one.
    """
    kind = BoundKind(kind)
    if inputs.minor.radius_factor not in (RadiusFactor.FOUR, RadiusFactor.EIGHT):
        raise InvalidInput("unsupported radius factor")
    ts = sorted({int(x) for x in np.atleast_1d(t)} | {0})
    tables = {}
    for name in _PARTS[kind]:
        rows = rate_table(inputs, name, ts, policy)
        if rows[0].status is RateStatus.DIVERGENT:
            raise HypothesisFailure(f"{name}(0) diverges: {rows[0].note}")
        tables[name] = {r.t: r for r in rows}
    first, second = _PARTS[kind]
    out = []
    for tt in sorted({int(x) for x in np.atleast_1d(t)}):
        a, b = tables[first][tt], tables[second][tt]
        status = RateStatus.INCONCLUSIVE if RateStatus.INCONCLUSIVE in (a.status, b.status) else RateStatus.CONVERGED
        tb = None if a.tail_bound is None or b.tail_bound is None else a.tail_bound + b.tail_bound
        note = UNKNOWN_CONSTANT_NOTE + ("" if status is RateStatus.CONVERGED else f"; {a.note or b.note}")
        out.append(RateReport(f"{first}+{second}", tt, a.value + b.value, a.terms_used + b.terms_used,
                              tb, False, status, note))
    return out[0] if np.ndim(t) == 0 else out


# ---------------------------------------------------------------------------
# law-of-large-numbers hypotheses


class Trend(enum.Enum):
    DECREASING = "decreasing"
    FLAT = "flat"
    INCREASING = "increasing"


@dataclass(frozen=True)
class LlnHypothesisReport:
    t: np.ndarray
    values: np.ndarray
    slope: float
    trend: Trend
    bounded: bool
    note: str

    @property
    def satisfied(self) -> bool:
        return self.trend is Trend.DECREASING


SLOPE_BAND = 0.05


def lln_sequence(inputs: RateInputs, delta: float, t, bounded: bool = False) -> np.ndarray:
    """``(K/lam)^{2 delta} pi(t) / t`` at ``g(t)``, or ``pi(t)/t`` when ``bounded``."""
    t = np.asarray(t, dtype=np.int64)
    K, a, lam = _composed(inputs, t)
    seq = pi_values(inputs, t) / t
    if not bounded:
        seq = (K / lam) ** (2.0 * delta) * seq
    return seq


def lln_hypothesis_check(inputs: RateInputs, delta: float, t_grid, bounded: bool = False) -> LlnHypothesisReport:
    """Numerical trend of the ergodic-average hypothesis sequence on ``t_grid``.

    The log-log slope is classified as decreasing below ``-0.05``,
    increasing above ``0.05`` and flat otherwise.  This is a diagnostic, not
    a proof of convergence to 0.
    """
    if not (0.0 < delta <= 0.5):
        raise InvalidInput("delta must lie in (0, 1/2]")
    t = np.asarray(t_grid, dtype=np.int64)
    if t.size < 3 or np.any(np.diff(t) <= 0) or t[0] < 1:
        raise InvalidInput("t_grid must be increasing, positive and have at least 3 points")
    seq = lln_sequence(inputs, delta, t, bounded)
    if not np.all(np.isfinite(seq)):
        raise EvaluationError("hypothesis sequence overflowed")
    if np.all(seq == 0):
        slope, trend = -math.inf, Trend.DECREASING
    else:
        slope = loglog_slope(t, seq)
        trend = Trend.DECREASING if slope < -SLOPE_BAND else Trend.INCREASING if slope > SLOPE_BAND else Trend.FLAT
    note = ""
    if inputs.minor.radius_factor is not RadiusFactor.EIGHT:
        note = "ergodic-average results need the small set of radius 8K/lambda; certificate uses 4K/lambda"
    return LlnHypothesisReport(t, seq, slope, trend, bounded, note)
