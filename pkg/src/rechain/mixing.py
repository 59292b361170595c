"""L-mixing estimates and ergodic-average diagnostics.

Conditional expectations given the future sigma-algebra are never computed.
Instead ``gamma_r(tau)`` is bounded by the restart surrogate
``2 E^{1/r}|phi(Z_{m+tau}) - phi(Z~_{m+tau})|^r`` where ``Z~`` restarts from a
fixed state at time ``m`` and shares the environment and innovations after
``m``.  Every reported ``gamma`` is therefore an upper-bound estimate, further
capped by ``2 M_r``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .certificates import CertifiedKernel
from .coupling import random_mapping, run_coupled_trials
from .envtail import EnvironmentProcess, sample_env_paths
from .errors import InvalidInput, PreconditionError
from .rates import LlnHypothesisReport
from .stats import jackknife_lp, loglog_slope
from .streams import mapping_inputs, substream

MIN_TRIALS = 1000
SLOPE_LIMIT = 0.05
REF_RUNS = 4000


class GammaMethod(enum.Enum):
    RESTART_SURROGATE = "restart_surrogate"
    IID_EXACT = "iid_exact"


@dataclass(frozen=True)
class MixingReport:
    """Moment and mixing-coefficient estimates for ``W_t = phi(X_t)``.

    ``gamma`` holds the capped upper-bound estimates on ``tau``; ``surrogate``
    the uncapped values.  ``Gamma_grid`` sums ``gamma`` over ``tau``,
    ``Gamma_cap`` adds ``2 M_r`` for every integer lag up to ``horizon`` missing
    from the grid, and ``Gamma_geometric`` replaces that cap by a fitted
    geometric decay (NaN when the tail of the table does not decay).
    """

    r: float
    M_r: float
    tau: np.ndarray
    gamma: np.ndarray
    gamma_stderr: np.ndarray
    surrogate: np.ndarray
    Gamma_grid: float
    Gamma_cap: float
    Gamma_geometric: float
    horizon: int
    method: GammaMethod
    note: str

    @property
    def Gamma_r(self) -> float:
        """Conservative truncated sum: grid values plus the cap for omitted lags."""
        return self.Gamma_grid + self.Gamma_cap


def _lp_norm(samples, r, axis=0):
    """Plain ``E^{1/r}|X|^r`` along ``axis`` with a delta-method standard error."""
    a = np.abs(np.asarray(samples, dtype=float)) ** r
    n = a.shape[axis]
    mean = a.mean(axis=axis)
    sd = a.std(axis=axis, ddof=1) if n > 1 else np.zeros_like(mean)
    norm = mean ** (1.0 / r)
    with np.errstate(divide="ignore", invalid="ignore"):
        grad = np.where(mean > 0, norm / (r * mean), 0.0)
    return norm, grad * sd / math.sqrt(n)


def _geometric_tail(tau, gamma, horizon, cap):
    """Fit ``log gamma`` linearly on the last half of the table and sum the fit.

    Returns the grid sum plus fitted values on omitted lags (each capped) plus
    the geometric remainder beyond ``horizon``.  NaN when the fit does not
    decay or fewer than three positive entries are available.
    """
    keep = gamma > 0
    tk, gk = tau[keep], gamma[keep]
    if tk.size < 3:
        return float("nan")
    half = tk.size // 2
    slope, icpt = np.polyfit(tk[half:], np.log(gk[half:]), 1)
    if not slope < 0:
        return float("nan")
    grid = set(int(t) for t in tau)
    missing = np.array([t for t in range(horizon + 1) if t not in grid], dtype=float)
    inner = float(np.sum(np.minimum(np.exp(icpt + slope * missing), cap))) if missing.size else 0.0
    q = math.exp(slope)
    beyond = math.exp(icpt + slope * (horizon + 1)) / (1.0 - q)
    return float(np.sum(gamma)) + inner + beyond


def _assemble(r, M_r, tau, surrogate, stderr, horizon, method, note) -> MixingReport:
    cap = 2.0 * M_r
    gamma = np.minimum(surrogate, cap)
    tau = np.asarray(tau, dtype=np.int64)
    if horizon < int(tau.max()):
        raise InvalidInput("horizon must cover the lag grid")
    omitted = (horizon + 1) - len(set(int(t) for t in tau if t <= horizon))
    return MixingReport(
        r=float(r),
        M_r=float(M_r),
        tau=tau,
        gamma=gamma,
        gamma_stderr=np.where(surrogate > cap, 0.0, stderr),
        surrogate=np.asarray(surrogate, dtype=float),
        Gamma_grid=float(np.sum(gamma)),
        Gamma_cap=float(cap * omitted),
        Gamma_geometric=_geometric_tail(tau.astype(float), gamma, horizon, cap),
        horizon=int(horizon),
        method=method,
        note=note,
    )


def estimate_gamma_by_restart(
    setup: CertifiedKernel,
    env: EnvironmentProcess,
    phi: Callable,
    r: float,
    m,
    tau_grid,
    trials: int,
    seed: int,
    x0=0.0,
    anchor=0.0,
    horizon: Optional[int] = None,
    tags: tuple = ("mixing",),
) -> MixingReport:
    """Restart-surrogate estimates of ``gamma_r(phi(X), tau)``.

    ``m`` is an anchor time or a sequence of them; ``gamma(tau)`` takes the
    largest surrogate over the anchors, approximating the supremum over
    ``t >= tau``.  ``M_r`` is the largest empirical ``E^{1/r}|phi(Z_t)|^r`` over
    all simulated times.
    """
    if trials < MIN_TRIALS:
        raise PreconditionError(f"restart estimates need at least {MIN_TRIALS} trials")
    if r < 1:
        raise InvalidInput("moment order r must be at least 1")
    anchors = sorted(set(int(a) for a in np.atleast_1d(m)))
    tau = np.asarray(sorted(set(int(t) for t in np.atleast_1d(tau_grid))), dtype=np.int64)
    if anchors[0] < 0 or tau[0] < 0:
        raise InvalidInput("anchor times and lags must be nonnegative")
    T = anchors[-1] + int(tau[-1]) + 1
    best = np.full(tau.size, -np.inf)
    best_se = np.zeros(tau.size)
    M_r = 0.0
    for a in anchors:
        batch = run_coupled_trials(setup, env, x0, anchor, T, trials, seed, m=a, tags=tags)
        w = np.asarray(phi(batch.z), dtype=float)
        norms, _ = _lp_norm(w, r, axis=0)
        M_r = max(M_r, float(np.max(norms)))
        wt = np.asarray(phi(np.nan_to_num(batch.z_tilde)), dtype=float)
        diff = w[:, a + tau] - wt[:, a + tau]
        val, se = _lp_norm(diff, r, axis=0)
        val, se = 2.0 * val, 2.0 * se
        better = val > best
        best = np.where(better, val, best)
        best_se = np.where(better, se, best_se)
    H = int(horizon) if horizon is not None else int(tau[-1])
    note = "upper-bound estimates from the restart surrogate, capped at 2 M_r"
    return _assemble(r, M_r, tau, best, best_se, H, GammaMethod.RESTART_SURROGATE, note)


def iid_gamma_reports(sampler: Callable, r: float, tau_grid, trials: int, seed: int, horizon: Optional[int] = None):
    """Surrogate and exact mixing tables for an i.i.d. process ``W_t``.

    ``sampler(rng, size)`` draws independent copies of ``W``.  The exact
    coefficients are ``gamma(0) = E^{1/r}|W - EW|^r`` and ``gamma(tau) = 0``
    for ``tau >= 1``.  The surrogate uses the mean as restart value at lag 0
    and an independent copy at positive lags.  Returns ``(surrogate, exact)``.
    """
    if trials < MIN_TRIALS:
        raise PreconditionError(f"i.i.d. estimates need at least {MIN_TRIALS} trials")
    rng = substream(seed, "iid-mixing")
    w = np.asarray(sampler(rng, trials), dtype=float)
    w2 = np.asarray(sampler(rng, trials), dtype=float)
    tau = np.asarray(sorted(set(int(t) for t in np.atleast_1d(tau_grid))), dtype=np.int64)
    M_r, _ = _lp_norm(w, r)
    central, central_se = _lp_norm(w - w.mean(), r)
    indep, indep_se = _lp_norm(w - w2, r)
    sur = np.where(tau == 0, 2.0 * central, 2.0 * indep)
    sur_se = np.where(tau == 0, 2.0 * central_se, 2.0 * indep_se)
    exact = np.where(tau == 0, central, 0.0)
    exact_se = np.where(tau == 0, central_se, 0.0)
    H = int(horizon) if horizon is not None else int(tau[-1])
    rep_s = _assemble(r, M_r, tau, sur, sur_se, H, GammaMethod.RESTART_SURROGATE, "surrogate for an i.i.d. process")
    # exact lags beyond the grid are zero, so no cap is needed for them
    rep_e = MixingReport(
        r=float(r), M_r=float(M_r), tau=tau, gamma=exact, gamma_stderr=exact_se, surrogate=exact,
        Gamma_grid=float(np.sum(exact)), Gamma_cap=0.0, Gamma_geometric=float(np.sum(exact)),
        horizon=H, method=GammaMethod.IID_EXACT, note="exact coefficients of an i.i.d. process",
    )
    return rep_s, rep_e


# ---------------------------------------------------------------------------
# moment inequality


@dataclass(frozen=True)
class MomentRatioReport:
    N: np.ndarray
    ratio: np.ndarray
    stderr: np.ndarray
    slope: float
    slope_stderr: float
    M_r: float
    Gamma_r: float
    centered: bool
    note: str

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.slope) and self.slope <= SLOPE_LIMIT)


def check_moment_inequality(
    sampler: Callable,
    r: float,
    N_grid,
    trials: int,
    seed: int,
    Gamma_r: float,
    M_r: Optional[float] = None,
) -> MomentRatioReport:
    """Ratio ``E^{1/r}|sum_{i<=N} W_i|^r / (N^{1/2} M_r^{1/2} Gamma_r^{1/2})`` across ``N_grid``.

    ``sampler(rng, trials, length)`` returns an array ``(trials, length)`` of
    process paths.  Input whose mean differs from zero by more than three
    standard errors is centered by its overall sample mean, which leaves
    ``Gamma_r`` unchanged.  The check passes when the log-log slope of the
    ratio in ``N`` is at most 0.05.
    """
    if r < 2:
        raise InvalidInput("the moment inequality needs r >= 2")
    if not (Gamma_r > 0 and math.isfinite(Gamma_r)):
        raise InvalidInput("Gamma_r must be positive and finite")
    N = np.asarray(sorted(set(int(n) for n in np.atleast_1d(N_grid))), dtype=np.int64)
    if N[0] < 1:
        raise InvalidInput("N must be positive")
    w = np.asarray(sampler(substream(seed, "moment"), trials, int(N[-1])), dtype=float)
    mean = float(w.mean())
    se = float(w.std(ddof=1) / math.sqrt(w.size))
    centered = abs(mean) > 3.0 * se
    note = ""
    if centered:
        w = w - mean
        note = f"input centered (sample mean {mean:.4g})"
    if M_r is None:
        norms, _ = _lp_norm(w, r, axis=0)
        M_r = float(np.max(norms))
    sums = np.cumsum(w, axis=1)[:, N - 1]
    num, num_se = _lp_norm(sums, r, axis=0)
    denom = np.sqrt(N) * math.sqrt(M_r * Gamma_r)
    ratio = num / denom
    rse = num_se / denom
    slope = loglog_slope(N, ratio)
    x = np.log(N.astype(float))
    c = (x - x.mean()) / np.sum((x - x.mean()) ** 2) if N.size > 1 else np.zeros(1)
    with np.errstate(divide="ignore", invalid="ignore"):
        slope_se = float(math.sqrt(np.sum((c * rse / ratio) ** 2))) if N.size > 1 else float("nan")
    return MomentRatioReport(N, ratio, rse, slope, slope_se, float(M_r), float(Gamma_r), centered, note)


# ---------------------------------------------------------------------------
# ergodic averages


def simulate_chain(target, env_paths, x0, e) -> np.ndarray:
    """Paths of the chain driven by uniforms ``e`` of shape ``(trials, T)``.

    ``target`` is either a model exposing ``step`` and ``noise`` (innovations
    ``noise.ppf(e)``) or a :class:`CertifiedKernel`, sampled by inverse CDF.
    Returns ``(trials, T + 1)`` states.
    """
    env_paths = np.asarray(env_paths, dtype=float)
    N, T, _ = env_paths.shape
    out = np.empty((N, T + 1))
    out[:, 0] = x0
    model_like = hasattr(target, "step") and hasattr(target, "noise")
    for t in range(T):
        if model_like:
            out[:, t + 1] = target.step(env_paths[:, t], out[:, t], target.noise.ppf(e[:, t]))
        else:
            out[:, t + 1] = random_mapping(target, env_paths[:, t], out[:, t], e[:, t], e[:, t], coin_enabled=False)
    return out


def _env_block(env, trials, length, seed, tags):
    return np.concatenate([sample_env_paths(env, 1, length, substream(seed, *tags, "env", i)) for i in range(trials)])


@dataclass(frozen=True)
class LlnReport:
    N: np.ndarray
    lp_error: np.ndarray
    lp_stderr: np.ndarray
    mean_average: np.ndarray
    ref: float
    ref_err: float
    p: float
    trials: int
    burn_in: int
    decreasing: bool
    shape_slope: float
    covered: bool
    note: str


def coupling_burn_in(setup, env, x0, anchor, trials: int, seed: int, start: int = 64, limit: int = 1024):
    """Ten times the 99th percentile of empirical coupling times.

    Doubles the coupling horizon until 99% of pairs meet; returns ``None``
    when that fails within ``limit`` steps.
    """
    T = start
    while T <= limit:
        batch = run_coupled_trials(setup, env, x0, anchor, T, trials, seed, tags=("burn-in",))
        ct = batch.coupling_time.astype(float)
        ct[ct < 0] = np.inf
        q = float(np.quantile(ct, 0.99))
        if math.isfinite(q):
            return int(10 * max(q, 1.0))
        T *= 2
    return None


def lln_experiment(
    target,
    setup: CertifiedKernel,
    env: EnvironmentProcess,
    phi: Callable,
    delta: float,
    p: float,
    N_grid,
    trials: int,
    seed: int,
    x0=0.0,
    bounded: bool = False,
    hypothesis: Optional[LlnHypothesisReport] = None,
    reference: Optional[float] = None,
    ref_runs: Optional[int] = None,
    anchor=None,
) -> LlnReport:
    """Empirical ``E^{1/p}|avg_N - ref|^p`` of ergodic averages of ``phi(X)``.

    ``target`` drives the simulation (see :func:`simulate_chain`); ``setup``
    supplies the certified kernel used for the coupling burn-in.  When
    ``reference`` is absent it is estimated from ``ref_runs`` independent
    runs: each is discarded for a burn-in of ``10 x`` the 99th percentile
    coupling time between chains started at ``x0`` and ``anchor``, then
    ``phi`` is averaged over the next ``burn-in`` states.  Without a
    satisfied hypothesis report the output is labelled non-covered.
    """
    if p < 1:
        raise InvalidInput("p must be at least 1")
    if not bounded and not p * delta < 1:
        raise InvalidInput("unbounded functionals need p < 1/delta")
    if trials < 2:
        raise InvalidInput("at least two trials are needed")
    N = np.asarray(sorted(set(int(n) for n in np.atleast_1d(N_grid))), dtype=np.int64)
    if N[0] < 1:
        raise InvalidInput("N must be positive")
    notes = []
    covered = bool(hypothesis is not None and hypothesis.satisfied)
    if hypothesis is None:
        notes.append("hypotheses not checked: output not covered by the theorems")
    elif not covered:
        notes.append("hypothesis check failed: output not covered by the theorems")
    Nmax = int(N[-1])
    burn = 0
    if reference is None:
        if anchor is None:
            raise InvalidInput("estimating the reference needs a second starting state (anchor)")
        burn = coupling_burn_in(setup, env, x0, anchor, 200, seed)
        if burn is None:
            burn = Nmax
            notes.append("pairs did not couple within 1024 steps; burn-in set to N_max")
        runs = ref_runs or max(trials, REF_RUNS)
        paths = _env_block(env, runs, 2 * burn, seed, ("lln-ref",))
        _, e = mapping_inputs(seed, ("lln-ref",), runs, 2 * burn)
        states = simulate_chain(target, paths, x0, e)[:, burn + 1 :]
        per_run = np.asarray(phi(states), dtype=float).mean(axis=1)
        ref = float(per_run.mean())
        ref_err = float(per_run.std(ddof=1) / math.sqrt(runs))
    else:
        ref, ref_err = float(reference), 0.0
    paths = _env_block(env, trials, Nmax, seed, ("lln",))
    _, e = mapping_inputs(seed, ("lln",), trials, Nmax)
    x = simulate_chain(target, paths, x0, e)
    vals = np.asarray(phi(x[:, 1:]), dtype=float)
    csum = np.cumsum(vals, axis=1)[:, N - 1]
    avg = csum / N
    errs = np.empty(N.size)
    ses = np.empty(N.size)
    for j in range(N.size):
        errs[j], ses[j] = jackknife_lp(avg[:, j] - ref, p)
    decreasing = bool(np.all(np.diff(errs) < 0))
    return LlnReport(
        N=N,
        lp_error=errs,
        lp_stderr=ses,
        mean_average=avg.mean(axis=0),
        ref=ref,
        ref_err=ref_err,
        p=float(p),
        trials=int(trials),
        burn_in=int(burn),
        decreasing=decreasing,
        shape_slope=loglog_slope(N, errs),
        covered=covered,
        note="; ".join(notes),
    )
