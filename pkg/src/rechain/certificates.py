"""Drift and minorization certificates for kernels in a random environment.

A kernel family ``Q(y, x, .)`` is indexed by an environment point ``y`` in R^d
and a real state ``x``.  Environment points are grouped into integer levels
(by default ``ceil(|y|)``); the certificate functions ``lam``, ``K`` and
``alpha`` are functions of the level only.

Batch conventions used throughout the package: environment points are arrays
of shape ``(n, d)`` and states are arrays of shape ``(n,)``.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    CapabilityError,
    EvaluationError,
    InvalidInput,
    PreconditionError,
)

LAMBDA_CAP = 1.0 / 3.0
ALPHA_CAP = 1.0 / 3.0
K_FLOOR = 1.0


class CertificateClampWarning(UserWarning):
    """A certificate value was clamped into its admissible range."""


# ---------------------------------------------------------------------------
# environment points and levels


def as_points(y, d: Optional[int] = None) -> np.ndarray:
    """Coerce ``y`` to a batch of environment points of shape ``(n, d)``.

    A 1-D array is read as ``n`` scalar points unless ``d`` says otherwise.
    """
    arr = np.asarray(y, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1) if d is not None and d > 1 else arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise InvalidInput(f"environment points must be at most 2-D, got shape {arr.shape}")
    return arr


def as_point(y) -> np.ndarray:
    """A single environment point as a 1-D coordinate vector."""
    arr = np.atleast_1d(np.asarray(y, dtype=float))
    if arr.ndim != 1:
        raise InvalidInput(f"expected a single environment point, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class LevelFunction:
    """Map from environment points to nonnegative integer levels.

    ``rule`` receives a float array of shape ``(n, d)`` and returns ``n``
    nonnegative integers.  The default is the ceiling of the Euclidean norm.
    Level sets ``{y : level(y) <= n}`` must be nested, which holds for any
    integer-valued rule.
    """

    rule: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def batch(self, ys) -> np.ndarray:
        pts = as_points(ys)
        if not np.all(np.isfinite(pts)):
            bad = np.argwhere(~np.isfinite(pts))[0][0]
            raise InvalidInput(f"non-finite environment point {pts[bad]!r}")
        if self.rule is None:
            out = np.ceil(np.sqrt(np.sum(pts * pts, axis=1)))
        else:
            out = np.asarray(self.rule(pts))
        out = np.asarray(out, dtype=np.int64)
        if np.any(out < 0):
            raise InvalidInput("level rule returned a negative level")
        return out

    def __call__(self, y) -> int:
        return int(self.batch(as_point(y).reshape(1, -1))[0])


def level_of(levels: LevelFunction, y) -> int:
    """Level of a single environment point (``ceil(|y|)`` by default).

    Raises
    ------
    InvalidInput
        If ``y`` has a non-finite coordinate.
    """
    return levels(y)


# ---------------------------------------------------------------------------
# level maps


@dataclass(frozen=True)
class Tabulated:
    """Step function on integer levels from ``[level, value]`` pairs.

    Between tabulated levels the value of the last tabulated level below is
    used; beyond the last level the final value is extended.  Levels below the
    first entry take the first value.
    """

    levels: tuple
    values: tuple

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=np.int64)
        vals = np.asarray(self.values, dtype=float)
        if lv.ndim != 1 or lv.size == 0 or lv.shape != vals.shape:
            raise InvalidInput("tabulated map needs matching nonempty level and value lists")
        if np.any(np.diff(lv) <= 0):
            raise InvalidInput("tabulated levels must be strictly increasing")
        if not np.all(np.isfinite(vals)):
            raise InvalidInput("tabulated values must be finite")
        object.__setattr__(self, "levels", tuple(int(v) for v in lv))
        object.__setattr__(self, "values", tuple(float(v) for v in vals))

    @classmethod
    def from_pairs(cls, pairs) -> "Tabulated":
        pairs = [tuple(p) for p in pairs]
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))

    def pairs(self) -> list:
        return [[lv, v] for lv, v in zip(self.levels, self.values)]

    def __call__(self, n):
        n = np.asarray(n)
        idx = np.searchsorted(np.asarray(self.levels), n, side="right") - 1
        out = np.asarray(self.values)[np.clip(idx, 0, len(self.values) - 1)]
        return float(out) if out.ndim == 0 else out


def constant(value: float) -> Tabulated:
    """Level map equal to ``value`` at every level."""
    return Tabulated((0,), (float(value),))


class _Clamped:
    """Evaluate ``fn`` on levels and clip into ``[lo, hi]``."""

    def __init__(self, fn, lo, hi):
        self.fn = fn
        self.lo = lo
        self.hi = hi

    def __call__(self, n):
        raw = np.asarray(self.fn(np.asarray(n)), dtype=float)
        out = np.clip(raw, self.lo, self.hi)
        return float(out) if out.ndim == 0 else out


PROBE_LEVELS = 256


def _prepare_map(fn, name, lo, hi, increasing, open_lower=False):
    """Validate monotonicity and clamp a level map.

    Tabulated maps are clamped exactly; callables are probed on levels
    ``0..PROBE_LEVELS`` and wrapped so that every evaluation is clipped.
    """
    if isinstance(fn, (int, float)):
        fn = constant(fn)
    probe = np.arange(PROBE_LEVELS + 1)
    try:
        vals = np.asarray(fn(probe), dtype=float)
    except Exception as exc:  # user callables
        raise EvaluationError(f"{name}: failed to evaluate on levels 0..{PROBE_LEVELS}: {exc}") from exc
    if vals.shape != probe.shape or not np.all(np.isfinite(vals)):
        raise InvalidInput(f"{name} must return finite values for integer levels")
    if open_lower and np.any(vals <= 0):
        raise InvalidInput(f"{name} must be strictly positive")
    steps = np.diff(vals)
    if increasing and np.any(steps < -1e-15 * np.abs(vals[1:])):
        raise InvalidInput(f"{name} must be nondecreasing in the level")
    if not increasing and np.any(steps > 1e-15 * np.abs(vals[1:])):
        raise InvalidInput(f"{name} must be nonincreasing in the level")
    clipped = np.clip(vals, lo, hi)
    if np.any(clipped != vals):
        warnings.warn(f"{name} clamped into [{lo}, {hi}]", CertificateClampWarning, stacklevel=3)
        if isinstance(fn, Tabulated):
            return Tabulated(fn.levels, tuple(np.clip(fn.values, lo, hi)))
        return _Clamped(fn, lo, hi)
    if isinstance(fn, Tabulated):
        return fn
    return _Clamped(fn, lo, hi)


def _abs_v(x):
    return np.abs(x)


@dataclass(frozen=True)
class DriftCertificate:
    """Lyapunov function ``V`` with level-dependent contraction ``lam`` and offset ``K``.

    Asserts ``int V dQ(y, x, .) <= (1 - lam(|y|)) V(x) + K(|y|)``.  ``lam`` is
    clamped into ``(0, 1/3]`` and must be nonincreasing; ``K`` is floored at 1
    and must be nondecreasing.
    """

    lam: Callable
    K: Callable
    V: Callable = _abs_v
    levels: LevelFunction = field(default_factory=LevelFunction)

    def __post_init__(self):
        object.__setattr__(self, "lam", _prepare_map(self.lam, "lambda", 0.0, LAMBDA_CAP, False, True))
        object.__setattr__(self, "K", _prepare_map(self.K, "K", K_FLOOR, np.inf, True))

    def values(self, x) -> np.ndarray:
        v = np.asarray(self.V(np.asarray(x, dtype=float)), dtype=float)
        if np.any(np.isnan(v)):
            raise EvaluationError("Lyapunov function returned NaN")
        if np.any(v < 0):
            raise InvalidInput("Lyapunov function must be nonnegative")
        return v

    def bound(self, n, vx):
        """Right-hand side ``(1 - lam(n)) V(x) + K(n)``."""
        return (1.0 - self.lam(n)) * vx + self.K(n)


class RadiusFactor(enum.IntEnum):
    """Small-set radius multiplier: ``R(n) = factor * K(n) / lam(n)``."""

    FOUR = 4
    EIGHT = 8


class NuFamily:
    """Level-indexed family of probability laws on the real line.

    Subclasses implement ``cdf``; ``ppf`` defaults to a bracketing bisection of
    the CDF and ``mass`` to a CDF difference.
    """

    atoms: Optional[np.ndarray] = None

    def cdf(self, n, r):
        raise NotImplementedError

    def mass(self, n, a, b):
        return self.cdf(n, b) - self.cdf(n, a)

    def ppf(self, n, z):
        from .coupling import generalized_inverse

        z = np.asarray(z, dtype=float)
        nn = np.broadcast_to(np.asarray(n), z.shape)
        return generalized_inverse(lambda r: self.cdf(nn, r), z, atoms=self.atoms)

    def sample(self, n, size, rng):
        from .streams import open_uniform

        return self.ppf(np.full(size, n), open_uniform(rng, size))


class UniformNu(NuFamily):
    """Uniform law on ``[-h(n), h(n)]`` for a positive half-width map ``h``."""

    def __init__(self, half_width: Callable):
        self.half_width = half_width

    def _h(self, n):
        return np.asarray(self.half_width(np.asarray(n)), dtype=float)

    def cdf(self, n, r):
        h = self._h(n)
        return np.clip((np.asarray(r, dtype=float) + h) / (2.0 * h), 0.0, 1.0)

    def mass(self, n, a, b):
        h = self._h(n)
        lo = np.clip(np.asarray(a, dtype=float), -h, h)
        hi = np.clip(np.asarray(b, dtype=float), -h, h)
        return np.maximum(hi - lo, 0.0) / (2.0 * h)

    def ppf(self, n, z):
        h = self._h(n)
        return -h + 2.0 * h * np.asarray(z, dtype=float)


class DiscreteNu(NuFamily):
    """Law on the atoms ``0, 1, ..., k-1``.

    ``weights`` is either one probability vector or a dict mapping levels to
    vectors (constant extension past the largest level).
    """

    def __init__(self, weights):
        if isinstance(weights, dict):
            keys = sorted(int(k) for k in weights)
            table = np.array([np.asarray(weights[k], dtype=float) for k in keys])
        else:
            keys = [0]
            table = np.asarray(weights, dtype=float).reshape(1, -1)
        if np.any(table < 0) or np.any(np.abs(table.sum(axis=1) - 1.0) > 1e-12):
            raise InvalidInput("discrete nu weights must be probability vectors")
        self._keys = np.asarray(keys)
        self._cum = np.cumsum(table, axis=1)
        self._cum[:, -1] = 1.0
        self.weights_table = table
        self.atoms = np.arange(table.shape[1], dtype=float)

    def _row(self, n):
        idx = np.searchsorted(self._keys, np.asarray(n), side="right") - 1
        return np.clip(idx, 0, len(self._keys) - 1)

    def weights(self, n) -> np.ndarray:
        return self.weights_table[self._row(n)]

    def cdf(self, n, r):
        r = np.asarray(r, dtype=float)
        row = np.broadcast_to(self._row(n), r.shape)
        k = self._cum.shape[1]
        j = np.floor(np.clip(r, -1.0, k)).astype(np.int64)
        out = self._cum[row, np.clip(j, 0, k - 1)]
        return np.where(r < 0, 0.0, out)

    def ppf(self, n, z):
        z = np.asarray(z, dtype=float)
        row = np.broadcast_to(self._row(n), z.shape)
        cum = self._cum[row]
        return np.argmax(cum >= z[..., None], axis=-1).astype(float)


@dataclass(frozen=True)
class MinorizationCertificate:
    """Minorization ``Q(y, x, .) >= alpha(|y|) nu_|y|`` on ``{V <= R(|y|)}``.

    ``alpha`` is clamped into ``(0, 1/3]`` and must be nonincreasing.
    """

    alpha: Callable
    nu: NuFamily
    radius_factor: RadiusFactor = RadiusFactor.FOUR

    def __post_init__(self):
        object.__setattr__(self, "alpha", _prepare_map(self.alpha, "alpha", 0.0, ALPHA_CAP, False, True))
        object.__setattr__(self, "radius_factor", RadiusFactor(int(self.radius_factor)))

    def radius(self, n, drift: DriftCertificate):
        """Small-set radius ``R(n) = factor * K(n) / lam(n)``."""
        return int(self.radius_factor) * drift.K(n) / drift.lam(n)


# ---------------------------------------------------------------------------
# kernels


def _pairs(y, x):
    ys = as_points(y)
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if ys.shape[0] == 1 and xs.shape[0] > 1:
        ys = np.repeat(ys, xs.shape[0], axis=0)
    if xs.shape[0] == 1 and ys.shape[0] > 1:
        xs = np.repeat(xs, ys.shape[0])
    if ys.shape[0] != xs.shape[0]:
        raise InvalidInput("environment and state batches differ in length")
    return ys, xs


@dataclass(frozen=True)
class KernelFamily:
    """Transition kernel ``Q(y, x, .)`` on the real line.

    Parameters
    ----------
    sampler
        ``sampler(y, x, rng)`` with ``y`` of shape ``(n, d)`` and ``x`` of
        shape ``(n,)``; returns ``n`` next states.
    cdf
        Optional ``cdf(y, x, r)`` giving ``Q(y, x, (-inf, r])`` elementwise.
    lyapunov_integral
        Optional exact ``int V dQ(y, x, .)`` as ``f(y, x)``.
    mass
        Optional ``mass(y, x, a, b) = Q(y, x, (a, b])``; more accurate than a
        CDF difference far in the tails.
    atoms
        For finite state spaces, the sorted support ``0, ..., k-1``.
    """

    sampler: Callable
    cdf: Optional[Callable] = None
    lyapunov_integral: Optional[Callable] = None
    mass: Optional[Callable] = None
    atoms: Optional[np.ndarray] = None

    def sample(self, y, x, rng) -> np.ndarray:
        ys, xs = _pairs(y, x)
        return np.asarray(self.sampler(ys, xs, rng), dtype=float)

    def interval_mass(self, y, x, a, b) -> np.ndarray:
        ys, xs = _pairs(y, x)
        if self.mass is not None:
            return np.asarray(self.mass(ys, xs, a, b), dtype=float)
        if self.cdf is None:
            raise CapabilityError("kernel has neither a CDF nor an interval-mass evaluator")
        return np.asarray(self.cdf(ys, xs, b), dtype=float) - np.asarray(self.cdf(ys, xs, a), dtype=float)


@dataclass(frozen=True)
class CertifiedKernel:
    """A kernel family bundled with its drift and minorization certificates."""

    kernel: KernelFamily
    drift: DriftCertificate
    minor: MinorizationCertificate

    def levels(self, ys) -> np.ndarray:
        return self.drift.levels.batch(ys)

    def radius(self, n):
        return self.minor.radius(n, self.drift)


def finite_kernel(matrices, levels: Optional[LevelFunction] = None) -> KernelFamily:
    """Kernel on states ``0..k-1`` with one stochastic matrix per level.

    ``matrices`` maps level -> ``(k, k)`` matrix.  Levels between or beyond the
    keys use the nearest key below; levels below the smallest key are an error.
    """
    keys = np.asarray(sorted(int(k) for k in matrices))
    stack = np.array([np.asarray(matrices[k], dtype=float) for k in keys])
    if stack.ndim != 3 or stack.shape[1] != stack.shape[2]:
        raise InvalidInput("kernel matrices must be square and of equal size")
    if np.any(stack < 0) or np.any(np.abs(stack.sum(axis=2) - 1.0) > 1e-12):
        raise InvalidInput("kernel matrices must be row-stochastic")
    cum = np.cumsum(stack, axis=2)
    cum[:, :, -1] = 1.0
    k = stack.shape[1]
    lv = levels or LevelFunction()

    def index(ys):
        n = lv.batch(ys)
        idx = np.searchsorted(keys, n, side="right") - 1
        if np.any(idx < 0):
            raise InvalidInput(f"no kernel matrix for level {int(n[idx < 0][0])}")
        return idx

    def states(xs):
        s = np.asarray(xs, dtype=float)
        j = np.rint(s).astype(np.int64)
        if np.any((j < 0) | (j >= k)) or np.any(np.abs(s - j) > 0):
            raise InvalidInput("finite-kernel states must be integers in 0..k-1")
        return j

    def sampler(ys, xs, rng):
        rows = cum[index(ys), states(xs)]
        u = rng.random(rows.shape[0])
        return np.argmax(rows > u[:, None], axis=1).astype(float)

    def cdf(ys, xs, r):
        rows = cum[index(ys), states(xs)]
        r = np.broadcast_to(np.asarray(r, dtype=float), (rows.shape[0],))
        j = np.clip(np.floor(np.clip(r, -1.0, k)).astype(np.int64), 0, k - 1)
        return np.where(r < 0, 0.0, rows[np.arange(rows.shape[0]), j])

    return KernelFamily(sampler=sampler, cdf=cdf, atoms=np.arange(k, dtype=float))


# ---------------------------------------------------------------------------
# verification


@dataclass(frozen=True)
class DriftReport:
    margins: np.ndarray
    stderr: np.ndarray
    violations: np.ndarray
    exact: bool

    @property
    def passed(self) -> bool:
        return not bool(np.any(self.violations))

    @property
    def worst_index(self) -> int:
        return int(np.argmin(self.margins))

    @property
    def worst_margin(self) -> float:
        return float(np.min(self.margins))


def check_drift(
    kernel: KernelFamily,
    cert: DriftCertificate,
    probes: Sequence,
    mc_samples: int = 10_000,
    tol: float = 1e-9,
    rng: Optional[np.random.Generator] = None,
) -> DriftReport:
    """Evaluate the drift margin at each probe ``(y, x)``.

    The margin is ``(1 - lam(n)) V(x) + K(n) - int V dQ(y, x, .)`` with
    ``n = level(y)``.  The integral is exact when the kernel supplies one,
    otherwise a Monte-Carlo mean over ``mc_samples`` draws.  A probe is a
    violation when its margin is below ``-tol - 3 * stderr``.

    Raises
    ------
    EvaluationError
        When the sampler fails or the Lyapunov values contain NaN; the error
        carries the offending probe.
    """
    probes = list(probes)
    if not probes:
        raise InvalidInput("check_drift needs at least one probe")
    exact = kernel.lyapunov_integral is not None
    if not exact:
        if mc_samples < 1000:
            raise PreconditionError("Monte-Carlo drift checks need mc_samples >= 1000")
        if rng is None:
            raise InvalidInput("a random generator is required for Monte-Carlo drift checks")
    margins = np.empty(len(probes))
    stderr = np.zeros(len(probes))
    for i, (y, x) in enumerate(probes):
        pt = as_point(y).reshape(1, -1)
        n = int(cert.levels.batch(pt)[0])
        vx = float(cert.values(np.asarray([x], dtype=float))[0])
        try:
            if exact:
                integral = float(np.asarray(kernel.lyapunov_integral(pt, np.asarray([x], dtype=float)))[0])
                se = 0.0
            else:
                draws = kernel.sample(np.repeat(pt, mc_samples, axis=0), np.full(mc_samples, float(x)), rng)
                vals = cert.values(draws)
                integral = float(np.mean(vals))
                se = float(np.std(vals, ddof=1) / math.sqrt(mc_samples))
        except EvaluationError as exc:
            raise EvaluationError(f"drift probe {i} (y={pt[0]}, x={x}): {exc}", probe=(y, x)) from exc
        except Exception as exc:
            raise EvaluationError(f"drift probe {i} (y={pt[0]}, x={x}) failed: {exc}", probe=(y, x)) from exc
        if not math.isfinite(integral):
            raise EvaluationError(f"drift probe {i} (y={pt[0]}, x={x}) gave a non-finite integral", probe=(y, x))
        margins[i] = cert.bound(n, vx) - integral
        stderr[i] = se
    violations = margins < -tol - 3.0 * stderr
    return DriftReport(margins=margins, stderr=stderr, violations=violations, exact=exact)


@dataclass(frozen=True)
class MinorizationReport:
    level: int
    alpha: float
    radius: float
    empirical_alpha: float
    worst_x: float
    worst_interval: tuple
    deficit: float
    passed: bool


def check_minorization(
    kernel: KernelFamily,
    drift: DriftCertificate,
    minor: MinorizationCertificate,
    y,
    x_grid,
    r_grid,
    tol: float = 0.0,
    rtol: float = 1e-9,
) -> MinorizationReport:
    """Check ``Q(y, x, (a, b]) >= alpha * nu((a, b])`` on grid intervals.

    Intervals are consecutive points of ``r_grid`` plus the two unbounded end
    intervals.  An interval passes when the kernel mass is at least
    ``alpha * nu_mass * (1 - rtol) - tol``.  The report's ``empirical_alpha``
    is the smallest ratio of kernel mass to nu mass (infinite where nu puts
    no mass).
    """
    if kernel.cdf is None and kernel.mass is None:
        raise CapabilityError("check_minorization needs the kernel CDF")
    pt = as_point(y).reshape(1, -1)
    n = int(drift.levels.batch(pt)[0])
    radius = float(minor.radius(n, drift))
    alpha = float(minor.alpha(n))
    xs = np.asarray(x_grid, dtype=float).ravel()
    vx = drift.values(xs)
    if np.any(vx > radius * (1 + 1e-12)):
        bad = xs[vx > radius * (1 + 1e-12)][0]
        raise PreconditionError(f"state {bad} lies outside the small set V <= {radius}")
    r = np.sort(np.asarray(r_grid, dtype=float).ravel())
    lo = np.concatenate(([-np.inf], r))
    hi = np.concatenate((r, [np.inf]))
    try:
        nu_mass = np.asarray(minor.nu.mass(n, lo, hi), dtype=float)
    except NotImplementedError as exc:
        raise CapabilityError("nu has no CDF") from exc
    best = (np.inf, 0.0, (lo[0], hi[0]), 0.0)
    passed = True
    for x in xs:
        q = kernel.interval_mass(np.repeat(pt, lo.size, axis=0), np.full(lo.size, x), lo, hi)
        need = alpha * nu_mass * (1.0 - rtol) - tol
        gap = q - need
        if np.any(gap < 0):
            passed = False
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(nu_mass > 0, q / np.where(nu_mass > 0, nu_mass, 1.0), np.inf)
        j = int(np.argmin(ratio))
        if ratio[j] < best[0]:
            best = (float(ratio[j]), float(x), (float(lo[j]), float(hi[j])), float(np.min(gap)))
    return MinorizationReport(
        level=n,
        alpha=alpha,
        radius=radius,
        empirical_alpha=best[0],
        worst_x=best[1],
        worst_interval=best[2],
        deficit=best[3],
        passed=passed,
    )
