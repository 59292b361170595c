"""Environment processes and tail bounds for their running maxima.

A tail bound is a pair ``(g, ell)`` with
``P(max_{1<=i<=t} level(Y_i) >= g(t)) <= ell(t)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import signal, special

from .certificates import LevelFunction
from .errors import CapabilityError, InvalidInput
from .stats import cp_upper
from .streams import substream

BLOCK = 1024


class Provenance(enum.Enum):
    GAUSSIAN = "gaussian"
    MOMENT = "moment"
    USER = "user"


def _ceil_int(x):
    # guard against 4.000000000001 style rounding before the ceiling
    return np.ceil(np.round(np.asarray(x, dtype=float), 9)).astype(np.int64)


@dataclass(frozen=True)
class TailBound:
    """Running-maximum tail bound ``(g, ell)``.

    ``g`` maps integer times to nondecreasing integer levels, ``ell`` to
    nonincreasing probabilities.  Values of ``ell`` are clipped into [0, 1].
    """

    g: Callable
    ell: Callable
    provenance: Provenance = Provenance.USER
    probe_horizon: int = 4096

    def __post_init__(self):
        t = np.arange(self.probe_horizon + 1)
        gv = np.asarray(self.g_at(t))
        lv = np.asarray(self.ell_at(t))
        if np.any(np.diff(gv) < 0):
            raise InvalidInput("g must be nondecreasing")
        if np.any(np.diff(lv) > 1e-15):
            raise InvalidInput("ell must be nonincreasing")

    def g_at(self, t):
        out = np.asarray(self.g(np.asarray(t)))
        out = np.maximum(out.astype(np.int64), 0)
        return int(out) if out.ndim == 0 else out

    def ell_at(self, t):
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            out = np.asarray(self.ell(np.asarray(t)), dtype=float)
        out = np.clip(np.nan_to_num(out, nan=1.0, posinf=1.0), 0.0, 1.0)
        return float(out) if out.ndim == 0 else out


def gaussian_tail(
    c1: Optional[float] = None,
    c2: float = 1.0,
    b: float = 0.5,
    std: float = 1.0,
    prefactor: float = 2.0,
) -> TailBound:
    """Tail pair for Gaussian environments.

    ``g(k) = ceil(c1 k^b)`` and ``ell(k) = min(1, prefactor * exp(-c2 k^(2b)))``.
    The defaults ``c1 = 2 sqrt(2) std``, ``c2 = 1``, ``b = 1/2`` come from the
    union bound ``P(max_{i<=t} |xi_i| >= 2 sqrt(2t)) <= 2 exp(-t)`` for
    unit-variance coordinates.
    """
    if not (0.0 < b <= 1.0):
        raise InvalidInput("b must lie in (0, 1]")
    if c2 <= 0 or prefactor <= 0:
        raise InvalidInput("c2 and prefactor must be positive")
    if c1 is None:
        c1 = 2.0 * math.sqrt(2.0) * std
    if c1 <= 0:
        raise InvalidInput("c1 must be positive")

    def g(k):
        return _ceil_int(c1 * np.asarray(k, dtype=float) ** b)

    def ell(k):
        k = np.asarray(k, dtype=float)
        return np.minimum(1.0, prefactor * np.exp(-c2 * k ** (2 * b)))

    return TailBound(g, ell, Provenance.GAUSSIAN)


def gaussian_moment(q: float, std: float = 1.0) -> float:
    """``E^{1/2q} |N(0, std^2)|^{2q}``."""
    log_m = q * math.log(2.0) + special.gammaln(q + 0.5) - 0.5 * math.log(math.pi)
    return std * math.exp(log_m / (2.0 * q))


def moment_order(chi: float, r: float) -> float:
    """Moment order used by :func:`moment_tail`.

    Markov's inequality applied to ``E max_{i<=t} |Y_i|^q <= C^q t^{1/2}`` at
    the threshold ``t^chi`` gives ``t^{-r}`` decay once ``chi q - 1/2 >= r``.
    """
    return max(r / chi + 0.5, (r + 0.5) / chi)


def moment_tail(moment_bound, chi: float, r: float) -> TailBound:
    """Polynomial tail pair from moment bounds of a stationary process.

    Parameters
    ----------
    moment_bound
        Callable ``q -> E^{1/2q}|Y_0|^{2q}`` or a dict keyed by ``q``.
    chi
        Growth exponent of ``g(t) = ceil(t^chi)``.
    r
        Decay exponent of ``ell(t) = min(1, C(q)^q / t^r)``.
    """
    if chi <= 0:
        raise InvalidInput("chi must be positive")
    if r < 1:
        raise InvalidInput("r must be at least 1")
    q = moment_order(chi, r)
    if callable(moment_bound):
        try:
            cq = moment_bound(q)
        except Exception as exc:
            raise CapabilityError(f"moment of order {2 * q} unavailable: {exc}") from exc
    else:
        match = [v for k, v in dict(moment_bound).items() if abs(float(k) - q) < 1e-12]
        if not match:
            raise CapabilityError(f"moment table lacks order q = {q}")
        cq = match[0]
    if cq is None or not math.isfinite(cq) or cq < 0:
        raise CapabilityError(f"moment of order {2 * q} is not finite")
    scale = float(cq) ** q

    def g(t):
        return _ceil_int(np.asarray(t, dtype=float) ** chi)

    def ell(t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(t < 1, 1.0, np.minimum(1.0, scale / np.maximum(t, 1.0) ** r))

    tb = TailBound(g, ell, Provenance.MOMENT)
    object.__setattr__(tb, "moment_order", q)
    return tb


# ---------------------------------------------------------------------------
# environment processes


class EnvKind(enum.Enum):
    IID_GAUSSIAN = "iid_gaussian"
    GAUSSIAN_MOVING_AVERAGE = "gaussian_moving_average"
    USER_SAMPLER = "user_sampler"


@dataclass(frozen=True)
class EnvironmentProcess:
    """Stationary environment process.

    Parameters
    ----------
    kind
        Process family.
    dim
        Dimension of each environment point.
    std
        Per-coordinate standard deviation of the driving white noise.
    coeffs
        Moving-average weights ``a_0..a_J`` (truncation ``J = len - 1``).
    residual
        Reported truncation residual ``sum_{j>J} a_j^2``.
    emit_innovations
        For a scalar moving average, emit points ``(w_t, xi_t)`` pairing the
        innovation with the average (``dim`` becomes 2).
    sampler
        For ``USER_SAMPLER``: ``sampler(n_paths, length, rng)`` returning an
        array ``(n_paths, length, dim)`` of stationary path segments.
    """

    kind: EnvKind = EnvKind.IID_GAUSSIAN
    dim: int = 1
    std: float = 1.0
    coeffs: Optional[tuple] = None
    residual: float = 0.0
    emit_innovations: bool = False
    sampler: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind is EnvKind.GAUSSIAN_MOVING_AVERAGE:
            if self.coeffs is None or len(self.coeffs) == 0:
                raise InvalidInput("moving average needs coefficients")
            a = np.asarray(self.coeffs, dtype=float)
            if not np.all(np.isfinite(a)):
                raise InvalidInput("moving-average coefficients must be finite")
            object.__setattr__(self, "coeffs", tuple(float(v) for v in a))
            if self.emit_innovations:
                if self.dim not in (1, 2):
                    raise InvalidInput("innovation pairing needs a scalar moving average")
                object.__setattr__(self, "dim", 2)
        if self.kind is EnvKind.USER_SAMPLER and self.sampler is None:
            raise InvalidInput("USER_SAMPLER needs a sampler")

    @property
    def truncation(self) -> int:
        return len(self.coeffs) - 1 if self.coeffs else 0

    def marginal_variance(self) -> float:
        """Variance of each moving-average coordinate (truncated)."""
        if self.kind is EnvKind.GAUSSIAN_MOVING_AVERAGE:
            return self.std**2 * float(np.sum(np.square(self.coeffs)))
        if self.kind is EnvKind.IID_GAUSSIAN:
            return self.std**2
        raise CapabilityError("marginal variance unknown for user samplers")

    def autocovariance(self, lag: int) -> float:
        a = np.asarray(self.coeffs, dtype=float)
        if lag > len(a) - 1:
            return 0.0
        return self.std**2 * float(np.dot(a[: len(a) - lag], a[lag:]))


def moving_average(coeffs, truncation: Optional[int] = None, std: float = 1.0, emit_innovations: bool = False):
    """Gaussian moving average ``xi_t = sum_j a_j w_{t-j}``.

    ``coeffs`` is a sequence or a callable ``j -> a_j``; with a callable the
    series is truncated at ``truncation`` and the residual ``sum_{j>J} a_j^2``
    is summed numerically up to ``j = 10^6`` (for square-summable weights).
    """
    if callable(coeffs):
        if truncation is None:
            raise InvalidInput("a truncation index is required for coefficient functions")
        j = np.arange(truncation + 1)
        a = np.asarray(coeffs(j), dtype=float)
        tail = np.asarray(coeffs(np.arange(truncation + 1, 10**6)), dtype=float)
        residual = float(np.sum(tail**2))
    else:
        a = np.asarray(coeffs, dtype=float)
        if truncation is not None:
            residual = float(np.sum(a[truncation + 1 :] ** 2))
            a = a[: truncation + 1]
        else:
            residual = 0.0
    return EnvironmentProcess(
        kind=EnvKind.GAUSSIAN_MOVING_AVERAGE,
        coeffs=tuple(a),
        residual=residual,
        std=std,
        emit_innovations=emit_innovations,
    )


def constant_environment(value=0.0, dim: int = 1) -> EnvironmentProcess:
    """Environment frozen at one point (every coordinate equal to ``value``)."""
    point = np.broadcast_to(np.asarray(value, dtype=float), (dim,)).copy()

    def sampler(n_paths, length, rng):
        return np.broadcast_to(point, (n_paths, length, dim)).copy()

    return EnvironmentProcess(kind=EnvKind.USER_SAMPLER, dim=dim, sampler=sampler)


def sample_env_paths(env: EnvironmentProcess, n_paths: int, length: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n_paths`` independent stationary path segments of ``length`` points.

    Returns an array of shape ``(n_paths, length, dim)``.
    """
    if length < 0 or n_paths < 0:
        raise InvalidInput("path counts and lengths must be nonnegative")
    if env.kind is EnvKind.IID_GAUSSIAN:
        return env.std * rng.standard_normal((n_paths, length, env.dim))
    if env.kind is EnvKind.USER_SAMPLER:
        out = np.asarray(env.sampler(n_paths, length, rng), dtype=float)
        return out.reshape(n_paths, length, -1)
    a = np.asarray(env.coeffs)
    J = len(a) - 1
    coords = 1 if env.emit_innovations else env.dim
    w = env.std * rng.standard_normal((n_paths, coords, length + J))
    if length == 0:
        return np.zeros((n_paths, 0, env.dim))
    if J == 0:
        xi = a[0] * w
    else:
        xi = signal.fftconvolve(w, a.reshape(1, 1, -1), mode="valid", axes=2) if length + J > 256 else _direct(w, a)
    xi = np.transpose(xi, (0, 2, 1))
    if env.emit_innovations:
        return np.concatenate([w[:, 0, J:, None], xi], axis=2)
    return xi


def _direct(w, a):
    J = len(a) - 1
    L = w.shape[2] - J
    out = np.zeros(w.shape[:2] + (L,))
    for j, aj in enumerate(a):
        out += aj * w[:, :, J - j : J - j + L]
    return out


def sample_env_path(env: EnvironmentProcess, start: int, stop: int, rng: np.random.Generator) -> np.ndarray:
    """Path on the integer window ``start..stop`` (inclusive), shape ``(stop-start+1, dim)``.

    The law is stationary, so only the window length matters; moving averages
    draw their ``J`` pre-window innovations internally.
    """
    if start > stop:
        raise InvalidInput("window start must not exceed its end")
    return sample_env_paths(env, 1, stop - start + 1, rng)[0]


# ---------------------------------------------------------------------------
# validation


def running_max_levels(paths: np.ndarray, levels: LevelFunction) -> np.ndarray:
    """Running maximum of levels along each path, shape ``(n_paths, length)``."""
    n, L, d = paths.shape
    lv = levels.batch(paths.reshape(n * L, d)).reshape(n, L)
    return np.maximum.accumulate(lv, axis=1)


@dataclass(frozen=True)
class TailCheckRow:
    t: int
    g: int
    ell: float
    count: int
    frequency: float
    upper99: float
    passed: bool


@dataclass(frozen=True)
class TailValidation:
    rows: list
    trials: int

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)


def exceedance_counts(env, t_list, thresholds, trials, seed, tags=("tail",), levels: Optional[LevelFunction] = None):
    """Count paths whose running maximum over ``1..t`` reaches ``threshold(t)``.

    With ``levels`` the running maximum is taken over integer levels,
    otherwise over Euclidean norms.  Trials are drawn in blocks of 1024 from
    substreams keyed by block index.
    """
    t_list = np.asarray(t_list, dtype=np.int64)
    thr = np.asarray(thresholds, dtype=float)
    T = int(t_list.max())
    counts = np.zeros(t_list.size, dtype=np.int64)
    done = 0
    block = 0
    while done < trials:
        rng = substream(seed, *tags, block)
        paths = sample_env_paths(env, BLOCK, T, rng)[: trials - done]
        if levels is None:
            size = np.sqrt(np.sum(paths * paths, axis=2))
            run = np.maximum.accumulate(size, axis=1)
        else:
            run = running_max_levels(paths, levels)
        counts += np.sum(run[:, t_list - 1] >= thr, axis=0)
        done += paths.shape[0]
        block += 1
    return counts


def validate_tail(
    env: EnvironmentProcess,
    tail: TailBound,
    t_list,
    trials: int,
    levels: Optional[LevelFunction] = None,
    seed: int = 0,
    level: float = 0.99,
) -> TailValidation:
    """Monte-Carlo check of ``P(max_{1<=i<=t} level(Y_i) >= g(t)) <= ell(t)``.

    A time passes when the one-sided Clopper-Pearson upper limit of the
    exceedance frequency is at most ``ell(t)``, or when no exceedance was
    seen and ``ell(t)`` is itself below the resolution ``1/trials``.
    """
    if trials < 1000:
        raise InvalidInput("validate_tail needs at least 1000 trials")
    levels = levels or LevelFunction()
    t_arr = np.asarray(t_list, dtype=np.int64)
    if np.any(t_arr < 1):
        raise InvalidInput("times must be at least 1")
    g = np.asarray(tail.g_at(t_arr)).reshape(-1)
    ell = np.asarray(tail.ell_at(t_arr)).reshape(-1)
    counts = exceedance_counts(env, t_arr, g, trials, seed, levels=levels)
    rows = []
    for t, gt, lt, k in zip(t_arr, g, ell, counts):
        up = cp_upper(int(k), trials, level)
        ok = bool(up <= lt or (k == 0 and lt < 1.0 / trials))
        rows.append(TailCheckRow(int(t), int(gt), float(lt), int(k), int(k) / trials, float(up), ok))
    return TailValidation(rows, trials)
