"""Exact computations for finite-state chains in a random environment.

Laws are row vectors and kernels row-stochastic matrices indexed by
environment level; one step maps ``mu`` to ``mu @ P[level]``.  Arithmetic is
carried out in ``np.longdouble``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .certificates import (
    CertifiedKernel,
    DiscreteNu,
    DriftCertificate,
    MinorizationCertificate,
    RadiusFactor,
    Tabulated,
    finite_kernel,
)
from .errors import CertificateViolation, InvalidInput

LD = np.longdouble
ROW_TOL = 1e-12


def finite_measure(weights, probability: bool = True) -> np.ndarray:
    """Validate a vector of nonnegative weights (summing to 1 when ``probability``)."""
    w = np.asarray(weights, dtype=LD)
    if w.ndim != 1 or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidInput("measure weights must be a finite nonnegative vector")
    if probability and abs(float(np.sum(w)) - 1.0) > ROW_TOL:
        raise InvalidInput("probability weights must sum to 1")
    return w


def _check_stochastic(P) -> np.ndarray:
    P = np.asarray(P, dtype=LD)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise InvalidInput("kernel matrices must be square")
    if np.any(P < 0):
        raise InvalidInput("kernel matrices must have nonnegative entries")
    if np.any(np.abs(np.sum(P, axis=1) - 1) > ROW_TOL):
        raise InvalidInput("kernel matrix rows must sum to 1")
    return P


@dataclass(frozen=True)
class FiniteChainSpec:
    """Finite-state kernel family with certificates.

    Parameters
    ----------
    V
        Lyapunov values of the states ``0..k-1``.
    kernels
        Mapping level -> ``(k, k)`` row-stochastic matrix.
    lam, K, alpha
        Level maps (tabulated or callables) for the certificates.
    nu
        One probability vector or a mapping level -> vector.
    radius_factor
        Small-set radius multiplier.
    """

    V: np.ndarray
    kernels: Mapping
    lam: object
    K: object
    alpha: object
    nu: object
    radius_factor: RadiusFactor = RadiusFactor.FOUR

    def __post_init__(self):
        V = np.asarray(self.V, dtype=float)
        if V.ndim != 1 or np.any(V < 0):
            raise InvalidInput("Lyapunov values must be a nonnegative vector")
        object.__setattr__(self, "V", V)
        mats = {int(n): _check_stochastic(P) for n, P in dict(self.kernels).items()}
        if any(P.shape[0] != V.size for P in mats.values()):
            raise InvalidInput("kernel size does not match the number of states")
        object.__setattr__(self, "kernels", mats)

    @property
    def size(self) -> int:
        return self.V.size

    def matrix(self, n: int) -> np.ndarray:
        if int(n) not in self.kernels:
            raise InvalidInput(f"no kernel for level {n}")
        return self.kernels[int(n)]

    def drift(self) -> DriftCertificate:
        V = self.V
        return DriftCertificate(lam=self.lam, K=self.K, V=lambda x: V[np.rint(np.asarray(x)).astype(np.int64)])

    def minor(self) -> MinorizationCertificate:
        return MinorizationCertificate(alpha=self.alpha, nu=DiscreteNu(self.nu), radius_factor=self.radius_factor)

    def certified(self) -> CertifiedKernel:
        mats = {n: np.asarray(P, dtype=float) for n, P in self.kernels.items()}
        return CertifiedKernel(finite_kernel(mats), self.drift(), self.minor())

    def nu_at(self, n: int) -> np.ndarray:
        return np.asarray(DiscreteNu(self.nu).weights(n), dtype=LD)


def exact_law_sequence(spec: FiniteChainSpec, mu0, env_levels) -> np.ndarray:
    """Laws ``mu_0, ..., mu_n`` along the level sequence; shape ``(n+1, k)``.

    ``mu_{j+1} = mu_j @ P[level_j]``.
    """
    mu = finite_measure(mu0)
    if mu.size != spec.size:
        raise InvalidInput("initial law has the wrong number of states")
    levels = [int(v) for v in env_levels]
    out = np.empty((len(levels) + 1, spec.size), dtype=LD)
    out[0] = mu
    for j, n in enumerate(levels):
        out[j + 1] = out[j] @ spec.matrix(n)
    return out


def exact_rho_beta(mu1, mu2, beta: float, V) -> float:
    """``sum_x (1 + beta V(x)) |mu1(x) - mu2(x)|``."""
    if not (0.0 <= beta <= 1.0):
        raise InvalidInput("beta must lie in [0, 1]")
    a = np.asarray(mu1, dtype=LD)
    b = np.asarray(mu2, dtype=LD)
    v = np.asarray(V, dtype=LD)
    if a.shape != b.shape or a.shape[-1] != v.size:
        raise InvalidInput("measures and Lyapunov values must share the state set")
    return np.sum((1 + LD(beta) * v) * np.abs(a - b), axis=-1)


def exact_tv_trajectory(spec: FiniteChainSpec, mu0, mu0_prime, env_levels):
    """Exact ``(rho_0, rho_1)`` between the two law sequences, each of length ``n+1``."""
    a = exact_law_sequence(spec, mu0, env_levels)
    b = exact_law_sequence(spec, mu0_prime, env_levels)
    return exact_rho_beta(a, b, 0.0, spec.V), exact_rho_beta(a, b, 1.0, spec.V)


def contraction_envelope(K: float, alpha: float, lam: float, start_rho1: float, n_steps: int) -> np.ndarray:
    """``(3K/alpha) (1 - alpha lam / 2)^n * rho_1(start)`` for ``n = 0..n_steps``."""
    n = np.arange(n_steps + 1)
    return 3.0 * K / alpha * (1.0 - alpha * lam / 2.0) ** n * start_rho1


def stationary_distribution(P) -> np.ndarray:
    """Invariant law of an irreducible row-stochastic matrix."""
    P = np.asarray(P, dtype=float)
    k = P.shape[0]
    A = np.vstack([P.T - np.eye(k), np.ones((1, k))])
    rhs = np.zeros(k + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    pi = np.asarray(pi, dtype=LD)
    for _ in range(50):  # polish in extended precision
        pi = pi @ np.asarray(P, dtype=LD)
    return pi / np.sum(pi)


# ---------------------------------------------------------------------------
# contraction lemmas


class ContractionLemma(enum.Enum):
    """``SMALL_SET``: factor ``1 - alpha lam / 2`` with ``beta = alpha / 2K`` and
    ``R = 4K / lam``.  ``HAIRER_MATTINGLY``: the general weighted-norm
    contraction with user-chosen ``R`` and ``alpha0``."""

    SMALL_SET = "small-set"
    HAIRER_MATTINGLY = "hairer-mattingly"


@dataclass(frozen=True)
class ContractionReport:
    lemma: ContractionLemma
    level: int
    beta: float
    factor: float
    worst_ratio: float
    pairs: int

    @property
    def passed(self) -> bool:
        return self.worst_ratio <= self.factor + 1e-12


def lemma_constants(lemma: ContractionLemma, alpha: float, lam: float, K: float,
                    radius: Optional[float] = None, alpha0: Optional[float] = None):
    """Return ``(beta, factor, radius)`` for the chosen contraction lemma."""
    lemma = ContractionLemma(lemma)
    if lemma is ContractionLemma.SMALL_SET:
        return alpha / (2.0 * K), 1.0 - alpha * lam / 2.0, 4.0 * K / lam
    gamma = 1.0 - lam
    if radius is None or not radius > 2.0 * K / (1.0 - gamma):
        raise InvalidInput("the general lemma needs a radius R > 2K/(1-gamma)")
    if alpha0 is None or not (0.0 < alpha0 < alpha):
        raise InvalidInput("alpha0 must lie in (0, alpha)")
    beta = alpha0 / K
    gamma0 = gamma + 2.0 * K / radius
    factor = max(1.0 - (alpha - alpha0), (2.0 + radius * beta * gamma0) / (2.0 + radius * beta))
    return beta, factor, radius


def check_finite_hypotheses(spec: FiniteChainSpec, n: int, radius: float, tol: float = 1e-12):
    """Exact drift and minorization checks at level ``n``.

    Raises
    ------
    CertificateViolation
        Naming the first state where either inequality fails.
    """
    P = spec.matrix(n)
    V = np.asarray(spec.V, dtype=LD)
    lam = LD(float(spec.drift().lam(n)))
    K = LD(float(spec.drift().K(n)))
    alpha = LD(float(spec.minor().alpha(n)))
    lhs = P @ V
    rhs = (1 - lam) * V + K
    bad = np.flatnonzero(lhs > rhs + LD(tol) * (1 + np.abs(rhs)))
    if bad.size:
        x = int(bad[0])
        raise CertificateViolation(f"drift fails at state {x}: {float(lhs[x])} > {float(rhs[x])}", y=n, x=x)
    nu = spec.nu_at(n)
    inside = np.flatnonzero(V <= LD(radius))
    for x in inside:
        deficit = alpha * nu - P[x]
        if np.any(deficit > tol):
            j = int(np.argmax(deficit))
            raise CertificateViolation(f"minorization fails at state {int(x)} for atom {j}", y=n, x=int(x), r=j)


def verify_contraction_lemma(
    spec: FiniteChainSpec,
    n: int,
    trials: int,
    lemma: ContractionLemma,
    rng: np.random.Generator,
    radius: Optional[float] = None,
    alpha0: Optional[float] = None,
) -> ContractionReport:
    """Worst ``rho_beta`` contraction ratio of the level-``n`` kernel.

    Hypotheses are verified exactly first; pairs are ``trials`` flat-simplex
    draws plus every pair of distinct point masses.
    """
    lemma = ContractionLemma(lemma)
    drift, minor = spec.drift(), spec.minor()
    lam, K, alpha = float(drift.lam(n)), float(drift.K(n)), float(minor.alpha(n))
    beta, factor, R = lemma_constants(lemma, alpha, lam, K, radius, alpha0)
    check_finite_hypotheses(spec, n, R)
    k = spec.size
    P = spec.matrix(n)
    a = rng.dirichlet(np.ones(k), size=trials)
    b = rng.dirichlet(np.ones(k), size=trials)
    i, j = np.nonzero(~np.eye(k, dtype=bool))
    eye = np.eye(k)
    mu1 = np.concatenate([a, eye[i]]).astype(LD)
    mu2 = np.concatenate([b, eye[j]]).astype(LD)
    before = exact_rho_beta(mu1, mu2, beta, spec.V)
    after = exact_rho_beta(mu1 @ P, mu2 @ P, beta, spec.V)
    keep = before > 0
    ratio = after[keep] / before[keep]
    return ContractionReport(lemma, int(n), beta, factor, float(np.max(ratio)), int(keep.sum()))


# ---------------------------------------------------------------------------
# random hypothesis-satisfying specs


def _repair_toward(m: np.ndarray, V: np.ndarray, target: float, anchor: int) -> np.ndarray:
    """Mix ``m`` with the point mass at ``anchor`` (where V = 0) until ``m . V <= target``."""
    mv = float(m @ V)
    if mv <= target:
        return m
    w = 1.0 - target / mv
    out = (1.0 - w) * m
    out[anchor] += w
    return out


def random_spec(
    rng: np.random.Generator,
    k: int = 5,
    radius_factor: RadiusFactor = RadiusFactor.FOUR,
    lam: Optional[float] = None,
    alpha: Optional[float] = None,
    K: Optional[float] = None,
) -> FiniteChainSpec:
    """Random single-level spec satisfying drift and minorization exactly.

    Rows on the small set are ``alpha nu + (1 - alpha) m`` and rows outside are
    ``m``; each ``m`` (and ``nu``) is mixed with the point mass at the
    zero-Lyapunov state just enough to meet the drift inequality, so the drift
    is typically tight.
    """
    lam = float(rng.uniform(0.02, 1 / 3)) if lam is None else lam
    alpha = float(rng.uniform(0.02, 1 / 3)) if alpha is None else alpha
    K = float(rng.uniform(1.0, 3.0)) if K is None else K
    R = int(radius_factor) * K / lam
    V = np.concatenate(([0.0], np.sort(rng.uniform(0.0, 2.0 * R, size=k - 1))))
    perm = rng.permutation(k)
    V = V[perm]
    anchor = int(np.flatnonzero(V == 0.0)[0])
    nu = _repair_toward(rng.dirichlet(np.ones(k)), V, K / 2.0, anchor)
    # exact-sum safety margin against rounding when checked in extended precision
    slack = 1.0 - 1e-9
    P = np.empty((k, k))
    for x in range(k):
        bound = ((1.0 - lam) * V[x] + K) * slack
        m = rng.dirichlet(np.full(k, 0.5))
        if V[x] <= R:
            target = (bound - alpha * float(nu @ V)) / (1.0 - alpha)
            P[x] = alpha * nu + (1.0 - alpha) * _repair_toward(m, V, target, anchor)
        else:
            P[x] = _repair_toward(m, V, bound, anchor)
    P /= P.sum(axis=1, keepdims=True)
    return FiniteChainSpec(
        V=V,
        kernels={0: P},
        lam=Tabulated((0,), (lam,)),
        K=Tabulated((0,), (K,)),
        alpha=Tabulated((0,), (alpha,)),
        nu=nu,
        radius_factor=radius_factor,
    )
