"""Random-mapping representation of a kernel family and coupled simulation.

Each step consumes a coin ``u`` and an innovation ``e``, both uniform on
(0, 1).  On the small set ``{V <= R(n)}`` a coin ``u <= alpha(n)`` sends every
state to the same point ``nu_n^{-1}(e)``; otherwise the state moves by the
inverse of the residual CDF ``(Q - alpha nu) / (1 - alpha)`` on the small set,
or of ``Q`` itself off it.  The marginal law of one step is exactly ``Q``.
Two chains fed the same ``(u, e)`` streams meet and stay together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .certificates import CertifiedKernel, as_point, as_points
from .envtail import EnvironmentProcess, sample_env_paths
from .errors import CertificateViolation, EvaluationError, InvalidInput, PreconditionError
from .stats import cp_interval
from .streams import mapping_inputs, substream

NEG_SLACK = 1e-9
BISECT_TOL = 1e-12
MAX_BISECT = 400


class _Violation(Exception):
    def __init__(self, index, r, detail):
        super().__init__(detail)
        self.index = index
        self.r = r


def generalized_inverse(cdf: Callable, z, atoms=None, tol: float = BISECT_TOL, center=None, guard: bool = False):
    """Vectorized ``inf{r : cdf(r) >= z}``.

    Parameters
    ----------
    cdf
        Elementwise CDF: ``cdf(r)`` with ``r`` shaped like ``z``.
    z
        Targets in (0, 1).
    atoms
        Sorted finite support; when given the inverse is exact.
    tol
        Absolute bisection tolerance (widened to a few ulps for large ``r``).
    center
        Starting point of the bracket search (default 0).
    guard
        Check the evaluated CDF values for range and monotonicity (slack
        ``1e-9``); failures raise an internal error carrying the element
        index and evaluation point.
    """
    z = np.asarray(z, dtype=float)
    shape = z.shape
    z = z.ravel()
    if atoms is not None:
        atoms = np.asarray(atoms, dtype=float)
        grid = np.broadcast_to(atoms, (z.size, atoms.size))
        vals = np.stack([np.asarray(cdf(np.full(z.size, a)), dtype=float).reshape(-1) for a in atoms], axis=1)
        if guard:
            _guard_values(vals, grid)
        hit = vals >= z[:, None]
        idx = np.where(hit.any(axis=1), np.argmax(hit, axis=1), atoms.size - 1)
        return atoms[idx].reshape(shape)
    c = np.zeros(z.size) if center is None else np.broadcast_to(np.asarray(center, dtype=float), shape).ravel().copy()
    width = 1.0 + np.abs(c)
    lo = c - width
    hi = c + width
    flo = np.asarray(cdf(lo.reshape(shape)), dtype=float).ravel()
    fhi = np.asarray(cdf(hi.reshape(shape)), dtype=float).ravel()
    for _ in range(1100):
        need_lo = flo >= z
        need_hi = fhi < z
        if not (need_lo.any() or need_hi.any()):
            break
        step = hi - lo
        lo = np.where(need_lo, lo - step, lo)
        hi = np.where(need_hi, hi + step, hi)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise EvaluationError("CDF bracket search overflowed; the law may not be proper")
        flo = np.where(need_lo, np.asarray(cdf(lo.reshape(shape)), dtype=float).ravel(), flo)
        fhi = np.where(need_hi, np.asarray(cdf(hi.reshape(shape)), dtype=float).ravel(), fhi)
    if guard:
        _guard_pair(flo, fhi, lo, hi)
    for _ in range(MAX_BISECT):
        scale = np.maximum(tol, 4.0 * np.spacing(np.maximum(np.abs(lo), np.abs(hi))))
        active = (hi - lo) > scale
        if not active.any():
            break
        mid = np.where(active, lo + 0.5 * (hi - lo), hi)
        fm = np.asarray(cdf(mid.reshape(shape)), dtype=float).ravel()
        if guard:
            bad = active & ((fm < flo - NEG_SLACK) | (fm > fhi + NEG_SLACK) | (fm < -NEG_SLACK) | (fm > 1 + NEG_SLACK))
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise _Violation(i, float(mid[i]), f"residual CDF {fm[i]:.3e} out of order or range")
        go_left = active & (fm >= z)
        go_right = active & ~(fm >= z)
        hi = np.where(go_left, mid, hi)
        fhi = np.where(go_left, fm, fhi)
        lo = np.where(go_right, mid, lo)
        flo = np.where(go_right, fm, flo)
    return hi.reshape(shape)


def _guard_values(vals, grid):
    bad = (vals < -NEG_SLACK) | (vals > 1 + NEG_SLACK)
    dec = np.zeros_like(bad)
    dec[:, 1:] = np.diff(vals, axis=1) < -NEG_SLACK
    bad |= dec
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise _Violation(int(i), float(grid[i, j]), f"residual CDF {vals[i, j]:.3e} out of order or range")


def _guard_pair(flo, fhi, lo, hi):
    bad = (flo < -NEG_SLACK) | (fhi > 1 + NEG_SLACK) | (flo > fhi + NEG_SLACK)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise _Violation(i, float(lo[i]), "residual CDF out of range on its bracket")


def random_mapping(setup: CertifiedKernel, ys, xs, u, e, coin_enabled: bool = True) -> np.ndarray:
    """Batch random mapping ``T(y, x; u, e)``.

    ``ys`` has shape ``(n, d)``, ``xs``, ``u``, ``e`` shape ``(n,)``.  With
    ``coin_enabled=False`` the minorization split is switched off and the
    output is plain inverse-CDF sampling from ``Q``.  Inversion brackets
    always start at the origin, so states with the same next-step law map to
    bitwise identical outputs.

    Raises
    ------
    CertificateViolation
        When the residual CDF is negative or decreasing beyond ``1e-9``,
        i.e. the minorization certificate is false at the offending point.
    """
    kernel, drift, minor = setup.kernel, setup.drift, setup.minor
    if kernel.cdf is None:
        from .errors import CapabilityError

        raise CapabilityError("the random mapping needs the kernel CDF")
    ys = as_points(ys)
    xs = np.asarray(xs, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    e = np.asarray(e, dtype=float).reshape(-1)
    n = drift.levels.batch(ys)
    alpha = np.asarray(minor.alpha(n), dtype=float) if coin_enabled else np.zeros(n.size)
    inside = drift.values(xs) <= np.asarray(minor.radius(n, drift), dtype=float)
    coin = inside & (u <= alpha)
    out = np.empty(xs.size)
    if coin.any():
        out[coin] = minor.nu.ppf(n[coin], e[coin])
    split = inside & ~coin & (alpha > 0)
    raw = ~coin & ~split
    atoms = kernel.atoms
    if split.any():
        yk, xk, ak, nk = ys[split], xs[split], alpha[split], n[split]

        def residual(r):
            q = kernel.cdf(yk, xk, r) - ak * minor.nu.cdf(nk, r)
            q = q / (1.0 - ak)
            return q

        try:
            out[split] = generalized_inverse(residual, e[split], atoms=atoms, guard=True)
        except _Violation as v:
            raise CertificateViolation(
                f"residual kernel CDF invalid at level {int(nk[v.index])}: {v}",
                y=yk[v.index], x=float(xk[v.index]), r=v.r,
            ) from None
    if raw.any():
        yk, xk = ys[raw], xs[raw]
        out[raw] = generalized_inverse(lambda r: kernel.cdf(yk, xk, r), e[raw], atoms=atoms)
    return out


def apply_random_mapping(setup: CertifiedKernel, y, x, u: float, e: float) -> float:
    """Single-point random mapping; see :func:`random_mapping`."""
    if not (0.0 < u < 1.0 and 0.0 < e < 1.0):
        raise InvalidInput("mapping inputs must lie in (0, 1)")
    pt = as_point(y).reshape(1, -1)
    return float(random_mapping(setup, pt, [x], [u], [e])[0])


# ---------------------------------------------------------------------------
# coupled chains


@dataclass(frozen=True)
class CoupledTrajectory:
    z: np.ndarray
    z_tilde: np.ndarray
    coupling_time: Optional[int]
    sigma: list
    env_levels: np.ndarray


@dataclass(frozen=True)
class CoupledBatch:
    """Many coupled pairs on a common horizon.

    ``z`` and ``z_tilde`` have shape ``(trials, T + 1)`` (``z_tilde`` is NaN
    before the anchor time ``m``); ``coupling_time`` is ``-1`` where the pair
    never met; ``in_pair_set[i, t]`` marks ``V(Z_t) + V(Z~_t) <= R(H_i)``.
    """

    z: np.ndarray
    z_tilde: np.ndarray
    coupling_time: np.ndarray
    in_pair_set: np.ndarray
    levels: np.ndarray
    H: np.ndarray
    m: int

    def trajectory(self, i: int) -> CoupledTrajectory:
        ct = int(self.coupling_time[i])
        ret = [self.m] + [int(t) for t in np.flatnonzero(self.in_pair_set[i]) if t > self.m]
        return CoupledTrajectory(self.z[i], self.z_tilde[i], None if ct < 0 else ct, ret, self.levels[i])

    def uncoupled(self, t) -> np.ndarray:
        """Indicator of ``Z_t != Z~_t`` for each trial."""
        return self.z[:, t] != self.z_tilde[:, t]

    def returns_by(self, t) -> np.ndarray:
        """Number of returns ``sigma_n`` with ``n >= 1`` and ``sigma_n <= t``."""
        window = self.in_pair_set[:, self.m + 1 : t + 1]
        return window.sum(axis=1)


def simulate_coupled_batch(setup: CertifiedKernel, env_paths, x0, anchor, m: int, u, e) -> CoupledBatch:
    """Drive ``Z`` (from ``x0`` at time 0) and ``Z~`` (from ``anchor`` at time ``m``)
    with the same mapping inputs.

    ``env_paths`` has shape ``(trials, T, d)`` with ``env_paths[:, t]`` the
    environment used for the step ``t -> t+1``; ``u`` and ``e`` have shape
    ``(trials, T)``.
    """
    env_paths = np.asarray(env_paths, dtype=float)
    if env_paths.ndim == 2:
        env_paths = env_paths[:, :, None]
    N, T, d = env_paths.shape
    if not (0 <= m < T):
        raise PreconditionError("anchor time m must satisfy 0 <= m < T")
    u = np.asarray(u, dtype=float).reshape(N, T)
    e = np.asarray(e, dtype=float).reshape(N, T)
    levels = setup.drift.levels.batch(env_paths.reshape(N * T, d)).reshape(N, T)
    H = levels.max(axis=1)
    RH = np.asarray(setup.minor.radius(H, setup.drift), dtype=float)
    z = np.empty((N, T + 1))
    zt = np.full((N, T + 1), np.nan)
    z[:, 0] = np.broadcast_to(np.asarray(x0, dtype=float), (N,))
    for t in range(T):
        if t == m:
            zt[:, t] = np.broadcast_to(np.asarray(anchor, dtype=float), (N,))
        z[:, t + 1] = random_mapping(setup, env_paths[:, t], z[:, t], u[:, t], e[:, t])
        if t >= m:
            zt[:, t + 1] = random_mapping(setup, env_paths[:, t], zt[:, t], u[:, t], e[:, t])
            met = z[:, t] == zt[:, t]
            if np.any(met & (z[:, t + 1] != zt[:, t + 1])):
                raise RuntimeError("coupled chains separated after meeting")
    same = z == zt
    same[:, :m] = False
    has = same.any(axis=1)
    ct = np.where(has, np.argmax(same, axis=1), -1)
    vsum = setup.drift.values(np.nan_to_num(z)) + setup.drift.values(np.nan_to_num(zt))
    in_set = (vsum <= RH[:, None]) & ~np.isnan(zt)
    return CoupledBatch(z, zt, ct, in_set, levels, H, m)


def simulate_coupled(setup: CertifiedKernel, env_path, x0, anchor, m: int, u, e) -> CoupledTrajectory:
    """Single coupled pair over the horizon ``T = len(env_path)``."""
    path = np.asarray(env_path, dtype=float)
    path = path.reshape(path.shape[0], -1)
    batch = simulate_coupled_batch(setup, path[None], x0, anchor, m, np.asarray(u)[None], np.asarray(e)[None])
    return batch.trajectory(0)


def run_coupled_trials(
    setup: CertifiedKernel,
    env: EnvironmentProcess,
    x0,
    anchor,
    horizon: int,
    trials: int,
    seed: int,
    m: int = 0,
    tags: tuple = ("couple",),
) -> CoupledBatch:
    """Coupled pairs with per-trial environment and mapping streams."""
    env_paths = np.concatenate(
        [sample_env_paths(env, 1, horizon, substream(seed, *tags, "env", i)) for i in range(trials)]
    )
    u, e = mapping_inputs(seed, tags, trials, horizon)
    return simulate_coupled_batch(setup, env_paths, x0, anchor, m, u, e)


def default_anchor(candidates, V: Callable) -> float:
    """Candidate with the smallest Lyapunov value."""
    c = np.asarray(candidates, dtype=float)
    return float(c[int(np.argmin(V(c)))])


# ---------------------------------------------------------------------------
# coupling-based bounds and diagnostics


@dataclass(frozen=True)
class CouplingCurve:
    t: np.ndarray
    uncoupled: np.ndarray
    trials: int
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    mean_returns: np.ndarray

    @property
    def frequency(self) -> np.ndarray:
        return self.uncoupled / self.trials

    def log_slope(self) -> float:
        """Least-squares slope of ``log frequency`` against ``t`` (positive entries)."""
        f = self.frequency
        keep = f > 0
        if keep.sum() < 2:
            return float("nan")
        return float(np.polyfit(self.t[keep], np.log(f[keep]), 1)[0])


def coupling_curve(batch: CoupledBatch, t_grid, level: float = 0.99) -> CouplingCurve:
    t = np.asarray(t_grid, dtype=np.int64)
    n = batch.z.shape[0]
    counts = np.array([int(batch.uncoupled(int(tt)).sum()) if tt >= batch.m else n for tt in t])
    lo, hi = cp_interval(counts, n, level)
    ret = np.array([float(batch.returns_by(int(tt)).mean()) if tt > batch.m else 0.0 for tt in t])
    return CouplingCurve(t, counts, n, np.atleast_1d(lo), np.atleast_1d(hi), ret)


def tv_upper_bound_by_coupling(
    setup: CertifiedKernel,
    env: EnvironmentProcess,
    x0,
    anchor,
    t,
    trials: int,
    seed: int = 0,
    level: float = 0.99,
) -> CouplingCurve:
    """Non-coupling frequency of pairs started at ``x0`` and ``anchor``.

    ``P(Z_t != Z~_t)`` upper-bounds the total-variation distance between the
    two laws at time ``t`` (given the environment, then averaged).  Returns
    the frequency on the grid ``t`` with two-sided Clopper-Pearson intervals.
    """
    if trials < 1000:
        raise InvalidInput("tv_upper_bound_by_coupling needs at least 1000 trials")
    t_grid = np.atleast_1d(np.asarray(t, dtype=np.int64))
    horizon = max(int(t_grid.max()), 1)
    batch = run_coupled_trials(setup, env, x0, anchor, horizon, trials, seed, m=0)
    return coupling_curve(batch, t_grid, level)


@dataclass(frozen=True)
class ReturnOverlay:
    theta: np.ndarray
    frequency: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    bound: np.ndarray

    @property
    def dominated(self) -> bool:
        """The bound is never below the lower confidence limit of the frequency."""
        return bool(np.all(self.bound >= self.ci_lo))


def return_overlay(batch: CoupledBatch, tau: int, thetas, alpha_H: float, level: float = 0.99) -> ReturnOverlay:
    """Empirical ``P(Z_{m+tau} != Z~_{m+tau}, sigma_theta <= m+tau)`` vs ``(1 - alpha(H))^(theta-1)``."""
    t = batch.m + int(tau)
    unc = batch.uncoupled(t)
    nret = batch.returns_by(t)
    th = np.asarray(thetas, dtype=np.int64)
    counts = np.array([int(np.sum(unc & (nret >= k))) for k in th])
    n = unc.size
    lo, hi = cp_interval(counts, n, level)
    bound = (1.0 - alpha_H) ** (th - 1)
    return ReturnOverlay(th, counts / n, np.atleast_1d(lo), np.atleast_1d(hi), bound)


def return_rate(lam_H: float) -> float:
    """``ln(1 + lam/2)``, the exponential rate used for return-time moments."""
    return math.log1p(lam_H / 2.0)


def epsilon_of(H: int, drift, minor, cbar: float = 8.0) -> float:
    """``ln(1 + lam/2) / (4 (ln cbar - 2 ln lam))`` at level ``H``.

    Used for the return-count threshold ``theta = ceil(epsilon * tau)``.
    """
    if cbar < 8.0:
        raise InvalidInput("cbar must be at least 8")
    lam = float(drift.lam(int(H)))
    if lam >= 1.0:
        raise InvalidInput("lambda(H) must be below 1")
    return return_rate(lam) / (4.0 * (math.log(cbar) - 2.0 * math.log(lam)))


def return_threshold(eps: float, tau: float) -> int:
    """``theta = ceil(eps * tau)`` (products within 1e-12 of an integer are rounded)."""
    return int(math.ceil(round(eps * tau, 12)))


@dataclass(frozen=True)
class ReturnTimeReport:
    rate: float
    moment: float
    stderr: float
    moment_first_tenth: float
    stderr_first_tenth: float
    gaps: int
    stable: bool
    status: str
    reference_bound: float


def return_gaps(trajectories: Sequence[CoupledTrajectory]) -> np.ndarray:
    gaps = [np.diff(np.asarray(tr.sigma)) for tr in trajectories if len(tr.sigma) > 1]
    return np.concatenate(gaps) if gaps else np.empty(0)


def return_time_diagnostic(trajectories: Sequence[CoupledTrajectory], H: int, drift, minor, cbar: float = 8.0) -> ReturnTimeReport:
    """Empirical ``E exp(rate * (sigma_{n+1} - sigma_n))`` with ``rate = ln(1 + lam(H)/2)``.

    Stability is judged by comparing the estimate on the first tenth of the
    gaps with the full-sample estimate (within 3 combined standard errors).
    ``cbar / lam(H)^2`` is reported for reference only; ``cbar`` is not known.
    """
    lam = float(drift.lam(int(H)))
    rate = return_rate(lam)
    gaps = return_gaps(trajectories)
    ref = cbar / lam**2
    if gaps.size < 100:
        return ReturnTimeReport(rate, float("nan"), float("nan"), float("nan"), float("nan"), int(gaps.size), False,
                                "inconclusive: fewer than 100 return intervals", ref)
    w = np.exp(rate * gaps)
    full = float(w.mean())
    se = float(w.std(ddof=1) / math.sqrt(w.size)) if w.size > 1 else 0.0
    head = w[: max(w.size // 10, 10)]
    part = float(head.mean())
    se_part = float(head.std(ddof=1) / math.sqrt(head.size)) if head.size > 1 else 0.0
    stable = bool(np.isfinite(full) and abs(full - part) <= 3.0 * math.hypot(se, se_part) + 1e-12)
    return ReturnTimeReport(rate, full, se, part, se_part, int(gaps.size), stable, "ok", ref)
