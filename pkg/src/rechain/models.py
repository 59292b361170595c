"""Three scalar models driven by a random environment, with derived certificates.

All models use ``V(x) = |x|`` and start from ``X_0 = 0`` unless told
otherwise.

``ContractionModel``
    ``X' = (1 - Delta(|y|)) x + sigma(y, x) eps`` with ``sigma`` in
    ``[sigma_lo, sigma_hi]``.
``VolatilityModel``
    ``X' = (1 - Delta) x + sigma(y, x) eps`` with
    ``c5 G(y) <= sigma <= c6 G(y)``.
``FsvModel``
    Environment ``y = (w, xi)``;
    ``X' = (1 - Delta) x + rho e^xi w + sqrt(1 - rho^2) e^xi eps``.

Certificate derivations (``R`` is the small-set radius ``factor * K / lam``
of the level, ``f`` the noise density, symmetric and decreasing in ``|x|``):

* For ``|x|, |z| <= R`` the one-step density at ``z`` is at least
  ``f(D / s_lo) / s_hi`` where ``D`` bounds ``|z - mean|`` and
  ``s_lo, s_hi`` bound the noise scale over the level band.  Integrating
  over ``[-R, R]`` gives ``Q >= 2 R f(D / s_lo) / s_hi * Uniform[-R, R]``.
* Contraction: ``D = 2R``, ``s = sigma``.  Volatility: ``D = 2R``,
  ``s_lo = c5 G(n-1)`` and ``s_hi = c6 G(n)`` since ``|y|`` lies in
  ``(n-1, n]``.  FSV: ``D = 2R + e^xi |w|`` and scale ``e^xi sqrt(1-rho^2)``;
  the worst case over ``|w|, |xi| <= n`` gives
  ``f((2R e^n + n) / s') e^{-n} / s'`` with ``s' = sqrt(1 - rho^2)``.
  This decays exponentially in ``n`` and drops below the smallest normal
  double near level 90.  Any level map that underflows (also the Gaussian
  contraction bound at large radii) is replaced by ``ALPHA_FLOOR``.
* ``alpha`` is the running minimum of these values capped at 1/3, so it is
  nonincreasing as required.
* Drift: ``E|m + s eps| <= |m| + s E|eps|`` gives
  ``K = max(1, sigma_hi E|eps|)``, ``max(1, c6 G(n) E|eps|)`` and
  ``max(1, c8 e^n (1 + n))`` with ``c8 = max(|rho|, sqrt(1-rho^2) E|eps|)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import special, stats

from .certificates import (
    CertifiedKernel,
    DriftCertificate,
    KernelFamily,
    MinorizationCertificate,
    RadiusFactor,
    UniformNu,
    as_points,
)
from .envtail import EnvironmentProcess, TailBound, gaussian_tail, moving_average
from .errors import InvalidConfiguration
from .rates import RateInputs, RateStatus, TruncationPolicy, rate_r3, rate_r4, DEFAULT_POLICY


# ---------------------------------------------------------------------------
# noise laws


class TailKind(enum.Enum):
    GAUSSIAN = "gaussian"
    EXPONENTIAL = "exponential"
    HEAVY = "heavy"


class Noise:
    """Symmetric noise law with a density decreasing in ``|x|``."""

    tail: TailKind

    def pdf(self, x):
        raise NotImplementedError

    def cdf(self, x):
        raise NotImplementedError

    def sf(self, x):
        return self.cdf(-np.asarray(x, dtype=float))

    def ppf(self, p):
        raise NotImplementedError

    def sample(self, rng, size):
        from .streams import open_uniform

        return self.ppf(open_uniform(rng, size))

    def abs_mean(self) -> float:
        return float(self.abs_shift_mean(0.0))

    def abs_shift_mean(self, mu):
        """``E|mu + eps|``."""
        raise NotImplementedError

    def interval_mass(self, a, b):
        """``P(a < eps <= b)`` computed from the nearer tail for accuracy."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        right = a >= 0
        with np.errstate(invalid="ignore"):
            out = np.where(right, self.sf(a) - self.sf(b), self.cdf(b) - self.cdf(a))
        return np.maximum(out, 0.0)


class GaussianNoise(Noise):
    """Standard normal; ``f(x) = f(0) e^{-x^2/2}``."""

    tail = TailKind.GAUSSIAN

    def pdf(self, x):
        return stats.norm.pdf(x)

    def cdf(self, x):
        return special.ndtr(x)

    def sf(self, x):
        return special.ndtr(-np.asarray(x, dtype=float))

    def ppf(self, p):
        return special.ndtri(p)

    def sample(self, rng, size):
        return rng.standard_normal(size)

    def abs_shift_mean(self, mu):
        mu = np.asarray(mu, dtype=float)
        return 2.0 * stats.norm.pdf(mu) + mu * (2.0 * special.ndtr(mu) - 1.0)


class LaplaceNoise(Noise):
    """Density ``e^{-|x|} / 2``; an exponential tail."""

    tail = TailKind.EXPONENTIAL

    def pdf(self, x):
        return 0.5 * np.exp(-np.abs(x))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x < 0, 0.5 * np.exp(np.minimum(x, 0.0)), 1.0 - 0.5 * np.exp(-np.maximum(x, 0.0)))

    def sf(self, x):
        return self.cdf(-np.asarray(x, dtype=float))

    def ppf(self, p):
        p = np.asarray(p, dtype=float)
        return np.where(p < 0.5, np.log(2.0 * p), -np.log(2.0 * (1.0 - p)))

    def sample(self, rng, size):
        return rng.laplace(0.0, 1.0, size)

    def abs_shift_mean(self, mu):
        a = np.abs(np.asarray(mu, dtype=float))
        return a + np.exp(-a)


class ParetoNoise(Noise):
    """Symmetric density ``((chi - 1) / (2 s)) (1 + |x|/s)^{-chi}``; heavy tail.

    ``E|eps| = s / (chi - 2)`` (finite for ``chi > 2``); the variance is
    finite for ``chi > 3``.
    """

    tail = TailKind.HEAVY

    def __init__(self, chi: float, scale: float = 1.0):
        if not chi > 2.0:
            raise InvalidConfiguration("the heavy-tailed noise needs chi > 2 for a finite mean")
        if not scale > 0:
            raise InvalidConfiguration("noise scale must be positive")
        self.chi = float(chi)
        self.scale = float(scale)

    def pdf(self, x):
        z = np.abs(np.asarray(x, dtype=float)) / self.scale
        return 0.5 * (self.chi - 1.0) * (1.0 + z) ** (-self.chi) / self.scale

    def logpdf(self, x):
        z = np.abs(np.asarray(x, dtype=float)) / self.scale
        return math.log(0.5 * (self.chi - 1.0) / self.scale) - self.chi * np.log1p(z)

    def sf(self, x):
        x = np.asarray(x, dtype=float)
        half = 0.5 * (1.0 + np.abs(x) / self.scale) ** (1.0 - self.chi)
        return np.where(x >= 0, half, 1.0 - half)

    def cdf(self, x):
        return self.sf(-np.asarray(x, dtype=float))

    def ppf(self, p):
        p = np.asarray(p, dtype=float)
        tail = np.minimum(p, 1.0 - p)
        mag = self.scale * ((2.0 * tail) ** (-1.0 / (self.chi - 1.0)) - 1.0)
        return np.where(p < 0.5, -mag, mag)

    def abs_shift_mean(self, mu):
        a = np.abs(np.asarray(mu, dtype=float)) / self.scale
        return self.scale * (a + (1.0 + a) ** (2.0 - self.chi) / (self.chi - 2.0))


def noise_from_name(name: str, chi: Optional[float] = None, scale: float = 1.0) -> Noise:
    name = name.lower()
    if name in ("gaussian", "normal"):
        return GaussianNoise()
    if name in ("laplace", "exponential"):
        return LaplaceNoise()
    if name in ("pareto", "heavy"):
        if chi is None:
            raise InvalidConfiguration("heavy-tailed noise needs chi")
        return ParetoNoise(chi, scale)
    raise InvalidConfiguration(f"unknown noise kind {name!r}")


# ---------------------------------------------------------------------------
# shared helpers

#: Stand-in for minorization constants below the double range.
ALPHA_FLOOR = np.finfo(float).tiny


def _radial(ys):
    pts = as_points(ys)
    return np.sqrt(np.sum(pts * pts, axis=1))


class _RunningMin:
    """Running minimum of a raw level map, capped at ``cap``, tabulated on demand.

    Values that underflow are raised to ``ALPHA_FLOOR`` so the certificate
    stays strictly positive.
    """

    def __init__(self, raw: Callable, cap: float = 1.0 / 3.0):
        self.raw = raw
        self.cap = cap
        self._table = np.empty(0)

    def _grow(self, top: int):
        size = max(int(top) + 1, 2 * self._table.size, 64)
        vals = np.minimum(np.asarray(self.raw(np.arange(size)), dtype=float), self.cap)
        vals = np.maximum(np.nan_to_num(vals, nan=0.0), ALPHA_FLOOR)
        self._table = np.minimum.accumulate(vals)

    def __call__(self, n):
        n = np.asarray(n)
        top = int(np.max(n)) if n.size else 0
        if top >= self._table.size:
            self._grow(top)
        out = self._table[np.clip(n, 0, None).astype(np.int64)]
        return float(out) if out.ndim == 0 else out


def _affine_kernel(mean_fn, scale_fn, noise: Noise, sampler=None) -> KernelFamily:
    """Kernel of ``X' = mean(y, x) + scale(y, x) * eps``."""

    def cdf(ys, xs, r):
        m, s = mean_fn(ys, xs), scale_fn(ys, xs)
        return noise.cdf((np.asarray(r, dtype=float) - m) / s)

    def mass(ys, xs, a, b):
        m, s = mean_fn(ys, xs), scale_fn(ys, xs)
        return noise.interval_mass((np.asarray(a, dtype=float) - m) / s, (np.asarray(b, dtype=float) - m) / s)

    def lyap(ys, xs):
        m, s = mean_fn(ys, xs), scale_fn(ys, xs)
        return s * noise.abs_shift_mean(m / s)

    def default_sampler(ys, xs, rng):
        return mean_fn(ys, xs) + scale_fn(ys, xs) * noise.sample(rng, xs.shape[0])

    return KernelFamily(sampler=sampler or default_sampler, cdf=cdf, lyapunov_integral=lyap, mass=mass)


# ---------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class ContractionModel:
    """``X' = (1 - Delta(|y|)) x + sigma(y, x) eps``.

    ``delta`` maps radii ``|y| >= 0`` into (0, 1] and must be nonincreasing;
    ``sigma(y, x)`` must stay in ``[sigma_lo, sigma_hi]``.
    """

    delta: Callable
    sigma: Callable
    sigma_lo: float
    sigma_hi: float
    noise: Noise = field(default_factory=GaussianNoise)
    x0: float = 0.0

    def __post_init__(self):
        if not (0 < self.sigma_lo <= self.sigma_hi):
            raise InvalidConfiguration("need 0 < sigma_lo <= sigma_hi")

    @classmethod
    def constant(cls, delta: float, sigma: float = 1.0, noise: Optional[Noise] = None) -> "ContractionModel":
        if not (0 < delta <= 1):
            raise InvalidConfiguration("Delta must lie in (0, 1]")
        return cls(
            delta=lambda r: np.full(np.shape(r), float(delta)),
            sigma=lambda ys, xs: np.full(np.shape(xs), float(sigma)),
            sigma_lo=sigma,
            sigma_hi=sigma,
            noise=noise or GaussianNoise(),
        )

    def _delta(self, ys):
        return np.asarray(self.delta(_radial(ys)), dtype=float)

    def mean(self, ys, xs):
        return (1.0 - self._delta(ys)) * np.asarray(xs, dtype=float)

    def scale(self, ys, xs):
        return np.asarray(self.sigma(as_points(ys), np.asarray(xs, dtype=float)), dtype=float)

    def step(self, y, x, innovation):
        ys = as_points(y)
        return self.mean(ys, x) + self.scale(ys, x) * np.asarray(innovation, dtype=float)

    def kernel(self) -> KernelFamily:
        return _affine_kernel(self.mean, self.scale, self.noise)

    def lam_raw(self, n):
        return np.asarray(self.delta(np.asarray(n, dtype=float)), dtype=float)

    def derive_certificates(self, radius_factor: RadiusFactor = RadiusFactor.FOUR):
        lam = _RunningMin(self.lam_raw)
        K = max(self.sigma_hi * self.noise.abs_mean(), 1.0)
        drift = DriftCertificate(lam=lam, K=K)
        factor = int(radius_factor)

        def radius(n):
            return factor * K / lam(n)

        def raw_alpha(n):
            R = radius(n)
            return 2.0 * R * self.noise.pdf(2.0 * R / self.sigma_lo) / self.sigma_hi

        minor = MinorizationCertificate(alpha=_RunningMin(raw_alpha), nu=UniformNu(radius), radius_factor=radius_factor)
        return drift, minor

    def certified(self, radius_factor: RadiusFactor = RadiusFactor.FOUR) -> CertifiedKernel:
        return CertifiedKernel(self.kernel(), *self.derive_certificates(radius_factor))

    def gaussian_exponent(self, radius_factor: RadiusFactor = RadiusFactor.FOUR) -> float:
        """Constant ``c3`` with ``alpha_raw(n) >= exp(-c3 R(n)^2)`` for standard normal noise.

        ``2R f(2R/sigma_lo)/sigma_hi = exp(-2R^2/sigma_lo^2 + ln(2R f(0)/sigma_hi))``;
        a negative log term is absorbed using ``R >= R(0)``.
        """
        if not isinstance(self.noise, GaussianNoise):
            raise InvalidConfiguration("the Gaussian exponent needs standard normal noise")
        drift, minor = self.derive_certificates(radius_factor)
        r_min = float(minor.radius(0, drift))
        shift = max(0.0, -math.log(2.0 * r_min * self.noise.pdf(0.0) / self.sigma_hi))
        return 2.0 / self.sigma_lo**2 + shift / r_min**2


@dataclass(frozen=True)
class VolatilityModel:
    """``X' = (1 - Delta) x + sigma(y, x) eps`` with ``c5 G(y) <= sigma <= c6 G(y)``.

    ``G`` maps radii to positive values, nondecreasing.  ``sigma`` defaults to
    ``c6 G(|y|)``.
    """

    delta: float
    G: Callable
    c5: float
    c6: float
    noise: Noise = field(default_factory=GaussianNoise)
    sigma: Optional[Callable] = None
    x0: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.delta < 1.0):
            raise InvalidConfiguration("Delta must lie in (0, 1); Delta = 0 leaves no contraction")
        if not (0 < self.c5 <= self.c6):
            raise InvalidConfiguration("need 0 < c5 <= c6")

    def _G(self, r):
        return np.asarray(self.G(np.asarray(r, dtype=float)), dtype=float)

    def mean(self, ys, xs):
        return (1.0 - self.delta) * np.asarray(xs, dtype=float)

    def scale(self, ys, xs):
        if self.sigma is None:
            return self.c6 * self._G(_radial(ys))
        return np.asarray(self.sigma(as_points(ys), np.asarray(xs, dtype=float)), dtype=float)

    def step(self, y, x, innovation):
        ys = as_points(y)
        return self.mean(ys, x) + self.scale(ys, x) * np.asarray(innovation, dtype=float)

    def kernel(self) -> KernelFamily:
        return _affine_kernel(self.mean, self.scale, self.noise)

    def derive_certificates(self, radius_factor: RadiusFactor = RadiusFactor.FOUR):
        lam_value = min(self.delta, 1.0 / 3.0)
        ea = self.noise.abs_mean()

        def K(n):
            return np.maximum(1.0, self.c6 * self._G(n) * ea)

        drift = DriftCertificate(lam=lam_value, K=K)
        factor = int(radius_factor)

        def radius(n):
            return factor * drift.K(n) / lam_value

        def raw_alpha(n):
            n = np.asarray(n)
            R = radius(n)
            lo = self.c5 * self._G(np.maximum(n - 1, 0))
            hi = self.c6 * self._G(n)
            return 2.0 * R * self.noise.pdf(2.0 * R / lo) / hi

        minor = MinorizationCertificate(alpha=_RunningMin(raw_alpha), nu=UniformNu(radius), radius_factor=radius_factor)
        return drift, minor

    def certified(self, radius_factor: RadiusFactor = RadiusFactor.FOUR) -> CertifiedKernel:
        return CertifiedKernel(self.kernel(), *self.derive_certificates(radius_factor))


@dataclass(frozen=True)
class FsvModel:
    """Volatility-modulated AR(1) with environment ``y = (w, xi)``.

    ``xi`` is a Gaussian moving average of the innovations ``w``; see
    :meth:`environment`.
    """

    rho: float
    delta: float
    ma_coeffs: tuple
    noise_tail_exponent: float
    noise_scale: float = 1.0
    x0: float = 0.0

    def __post_init__(self):
        if not (-1.0 < self.rho < 1.0):
            raise InvalidConfiguration("rho must lie in (-1, 1)")
        if not (0.0 < self.delta <= 1.0):
            raise InvalidConfiguration("Delta must lie in (0, 1]")
        if not self.noise_tail_exponent > 3.0:
            raise InvalidConfiguration("the noise tail exponent chi must exceed 3")
        if not self.noise_scale > 0:
            raise InvalidConfiguration("noise scale must be positive")
        object.__setattr__(self, "ma_coeffs", tuple(float(a) for a in self.ma_coeffs))

    @property
    def noise(self) -> ParetoNoise:
        return ParetoNoise(self.noise_tail_exponent, self.noise_scale)

    @property
    def c8(self) -> float:
        return max(abs(self.rho), math.sqrt(1.0 - self.rho**2) * self.noise.abs_mean())

    def environment(self) -> EnvironmentProcess:
        return moving_average(self.ma_coeffs, emit_innovations=True)

    def mean(self, ys, xs):
        pts = as_points(ys, 2)
        return (1.0 - self.delta) * np.asarray(xs, dtype=float) + self.rho * np.exp(pts[:, 1]) * pts[:, 0]

    def scale(self, ys, xs):
        pts = as_points(ys, 2)
        return math.sqrt(1.0 - self.rho**2) * np.exp(pts[:, 1]) * np.ones(np.shape(xs))

    def step(self, y, x, innovation):
        ys = as_points(y, 2)
        return self.mean(ys, x) + self.scale(ys, x) * np.asarray(innovation, dtype=float)

    def kernel(self) -> KernelFamily:
        return _affine_kernel(self.mean, self.scale, self.noise)

    def derive_certificates(self, radius_factor: RadiusFactor = RadiusFactor.FOUR):
        lam_value = min(self.delta, 1.0 / 3.0)
        c8 = self.c8

        def K(n):
            n = np.asarray(n, dtype=float)
            return np.maximum(1.0, c8 * np.exp(n) * (1.0 + n))

        drift = DriftCertificate(lam=lam_value, K=K)
        factor = int(radius_factor)
        s_prime = math.sqrt(1.0 - self.rho**2)
        noise = self.noise

        def radius(n):
            return factor * drift.K(n) / lam_value

        def raw_alpha(n):
            # log domain: the bound leaves the double range near level 90
            n = np.asarray(n, dtype=float)
            R = radius(n)
            arg = (2.0 * R * np.exp(n) + n) / s_prime
            log_a = np.log(2.0 * R) + noise.logpdf(arg) - n - math.log(s_prime)
            return np.maximum(np.exp(log_a), ALPHA_FLOOR)

        minor = MinorizationCertificate(alpha=_RunningMin(raw_alpha), nu=UniformNu(radius), radius_factor=radius_factor)
        return drift, minor

    def certified(self, radius_factor: RadiusFactor = RadiusFactor.FOUR) -> CertifiedKernel:
        return CertifiedKernel(self.kernel(), *self.derive_certificates(radius_factor))


def simulate_model(model, env_paths: np.ndarray, rng: np.random.Generator, x0=None) -> np.ndarray:
    """Direct simulation ``X_{t+1} = step(y_t, X_t, eps_{t+1})`` for a batch of paths.

    ``env_paths`` has shape ``(trials, T, d)``; returns ``(trials, T + 1)``.
    """
    env_paths = np.asarray(env_paths, dtype=float)
    N, T, _ = env_paths.shape
    out = np.empty((N, T + 1))
    out[:, 0] = model.x0 if x0 is None else x0
    noise = model.noise
    for t in range(T):
        out[:, t + 1] = model.step(env_paths[:, t], out[:, t], noise.sample(rng, N))
    return out


# ---------------------------------------------------------------------------
# named instances


def desk_contraction(delta: float = 1.0, sigma: float = 1.0) -> ContractionModel:
    """Constant contraction with Gaussian noise."""
    return ContractionModel.constant(delta, sigma, GaussianNoise())


def log_profile(delta_exp: float, knee: float = 3.0) -> Callable:
    """``Delta(r) = 1`` for ``r < knee`` and ``ln(r)^{-delta_exp}`` beyond, capped at 1."""

    def profile(r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            far = np.log(np.maximum(r, knee)) ** (-delta_exp)
        return np.where(r < knee, 1.0, np.minimum(1.0, far))

    return profile


def example_contraction(delta_exp: float = 0.25) -> ContractionModel:
    """Log-profile contraction with state-dependent volatility in [1, 1.5]."""
    return ContractionModel(
        delta=log_profile(delta_exp),
        sigma=lambda ys, xs: 1.0 + 0.5 * np.sin(np.asarray(xs)) ** 2,
        sigma_lo=1.0,
        sigma_hi=1.5,
        noise=GaussianNoise(),
    )


def example_volatility() -> VolatilityModel:
    """Constant contraction, volatility between 0.9 G and G with G(r) = 1 + r/4, Laplace noise."""
    G = lambda r: 1.0 + 0.25 * np.abs(r)

    def sigma(ys, xs):
        r = _radial(ys)
        xs = np.asarray(xs, dtype=float)
        return G(r) * (0.9 + 0.1 * xs**2 / (1.0 + xs**2))

    return VolatilityModel(delta=0.5, G=G, c5=0.9, c6=1.0, noise=LaplaceNoise(), sigma=sigma)


def example_fsv() -> FsvModel:
    """Negative leverage, slowly decaying moving-average log-volatility, chi = 4."""
    coeffs = tuple(0.3 * (j + 1.0) ** -0.8 for j in range(41))
    return FsvModel(rho=-0.5, delta=0.5, ma_coeffs=coeffs, noise_tail_exponent=4.0)


# ---------------------------------------------------------------------------
# contraction-profile rate study


@dataclass(frozen=True)
class ProfileStudyReport:
    delta: float
    tail: TailKind
    threshold: float
    r3: object
    r4: object
    summable: bool
    divergence_evidence: bool


def profile_envelope(delta: float, tail: TailKind, c4: float = 1.0) -> Callable:
    """``k -> exp(-c4 ln(k)^{p delta})`` with ``p = 2`` for Gaussian tails, 1 for exponential."""
    p = 2.0 if tail is TailKind.GAUSSIAN else 1.0

    def env(k):
        k = np.maximum(np.asarray(k, dtype=float), 1.0)
        return np.exp(-c4 * np.log(k) ** (p * delta))

    return env


def delta_profile_rate_study(
    model: ContractionModel,
    delta: float,
    tail: Optional[TailBound] = None,
    c4: float = 1.0,
    policy: TruncationPolicy = DEFAULT_POLICY,
) -> ProfileStudyReport:
    """Summability of ``r3`` for a log-type contraction profile.

    Uses the lower envelope ``alpha lam >= exp(-c4 ln^{p delta}(k))`` along
    ``g(k) = k`` with ``alpha = 1/3`` and ``lam = min(1/3, 3 x envelope)``.
    The summability threshold is ``delta < 1/2`` for Gaussian-type noise and
    ``delta < 1`` for exponential-type noise.
    """
    kind = model.noise.tail
    if kind is TailKind.HEAVY:
        raise InvalidConfiguration("the profile study covers Gaussian and exponential tails")
    if delta <= 0:
        raise InvalidConfiguration("delta must be positive")
    env = profile_envelope(delta, kind, c4)
    # flooring only enlarges lam, so divergence evidence stays conservative
    drift = DriftCertificate(lam=lambda n: np.clip(3.0 * env(n), ALPHA_FLOOR, 1.0 / 3.0), K=1.0)
    minor = MinorizationCertificate(alpha=1.0 / 3.0, nu=UniformNu(lambda n: 1.0 + 0.0 * np.asarray(n)))
    tail = tail or gaussian_tail()
    identity = TailBound(lambda k: np.asarray(k, dtype=np.int64), tail.ell, tail.provenance)
    inputs = RateInputs(drift, minor, identity)
    r3 = rate_r3(inputs, 0, policy)
    r4 = rate_r4(inputs, 0, policy)
    threshold = 0.5 if kind is TailKind.GAUSSIAN else 1.0
    return ProfileStudyReport(
        delta=delta,
        tail=kind,
        threshold=threshold,
        r3=r3,
        r4=r4,
        summable=r3.status is RateStatus.CONVERGED,
        divergence_evidence=r3.status is RateStatus.DIVERGENT,
    )
