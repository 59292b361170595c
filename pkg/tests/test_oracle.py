import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rechain.certificates import Tabulated
from rechain.errors import CertificateViolation, InvalidInput
from rechain.oracle import (
    ContractionLemma,
    FiniteChainSpec,
    contraction_envelope,
    exact_law_sequence,
    exact_rho_beta,
    exact_tv_trajectory,
    lemma_constants,
    random_spec,
    stationary_distribution,
    verify_contraction_lemma,
)


def spec_of(P, nu, alpha=1 / 3, V=None, lam=1 / 3, K=1.0):
    P = np.asarray(P, float)
    V = np.arange(P.shape[0], dtype=float) if V is None else np.asarray(V, float)
    return FiniteChainSpec(V=V, kernels={0: P}, lam=Tabulated((0,), (lam,)), K=Tabulated((0,), (K,)),
                           alpha=Tabulated((0,), (alpha,)), nu=np.asarray(nu, float))


def naive_laws(mats, mu0, levels):
    """Independent loop implementation of mu_{j+1}(y) = sum_x mu_j(x) P[x, y]."""
    out = [list(mu0)]
    for n in levels:
        P = mats[n]
        prev = out[-1]
        out.append([sum(prev[x] * P[x][y] for x in range(len(prev))) for y in range(len(prev))])
    return np.array(out)


def test_identity_keeps_law():
    spec = spec_of(np.eye(3), [1 / 3] * 3, V=[0, 0, 0])
    laws = exact_law_sequence(spec, [0.2, 0.3, 0.5], [0] * 4)
    assert np.all(laws == np.array([0.2, 0.3, 0.5], dtype=np.longdouble))


def test_uniform_rows_mix_in_one_step():
    spec = spec_of(np.full((2, 2), 0.5), [0.5, 0.5])
    laws = exact_law_sequence(spec, [1.0, 0.0], [0])
    np.testing.assert_array_equal(laws[1], [0.5, 0.5])


def test_random_spec_matches_naive_oracle():
    rng = np.random.default_rng(4)
    spec = random_spec(rng, k=4)
    mu0 = rng.dirichlet(np.ones(4))
    got = exact_law_sequence(spec, mu0, [0] * 5)
    want = naive_laws({0: spec.matrix(0).tolist()}, mu0.tolist(), [0] * 5)
    np.testing.assert_allclose(np.asarray(got, float), want, atol=1e-14)


def test_multi_level_path():
    P0 = np.array([[0.9, 0.1], [0.4, 0.6]])
    P1 = np.array([[0.5, 0.5], [0.1, 0.9]])
    spec = FiniteChainSpec(V=[0.0, 1.0], kernels={0: P0, 1: P1}, lam=Tabulated((0,), (0.3,)),
                           K=Tabulated((0,), (1.0,)), alpha=Tabulated((0,), (0.1,)), nu=[0.5, 0.5])
    path = [0, 1, 1, 0]
    got = exact_law_sequence(spec, [0.3, 0.7], path)
    want = naive_laws({0: P0, 1: P1}, [0.3, 0.7], path)
    np.testing.assert_allclose(np.asarray(got, float), want, atol=1e-15)
    with pytest.raises(InvalidInput):
        exact_law_sequence(spec, [0.3, 0.7], [2])


def test_rho_examples():
    V = np.array([0.0, 2.0, 5.0])
    mu = np.array([0.2, 0.3, 0.5])
    assert exact_rho_beta(mu, mu, 0.7, V) == 0
    a, b = np.eye(3)[1], np.eye(3)[2]
    assert exact_rho_beta(a, b, 0.0, V) == 2
    assert exact_rho_beta(a, b, 1.0, V) == pytest.approx(2 + 2.0 + 5.0)


def test_rho_rejects_bad_beta():
    with pytest.raises(InvalidInput):
        exact_rho_beta([1, 0], [0, 1], 1.5, [0, 1])


def test_small_set_factor():
    beta, factor, R = lemma_constants(ContractionLemma.SMALL_SET, 1 / 3, 1 / 3, 1.0)
    assert factor == pytest.approx(17 / 18)
    assert factor == pytest.approx(0.94444, abs=1e-5)
    assert beta == pytest.approx(1 / 6)
    assert R == pytest.approx(12.0)


def test_rank_one_kernel_collapses():
    nu = np.array([0.5, 0.3, 0.2])
    spec = spec_of(np.vstack([nu] * 3), nu)
    rep = verify_contraction_lemma(spec, 0, 200, ContractionLemma.SMALL_SET, np.random.default_rng(0))
    assert rep.worst_ratio <= 1e-13 and rep.passed


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_specs_contract(seed):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, k=5)
    rep = verify_contraction_lemma(spec, 0, 200, ContractionLemma.SMALL_SET, rng)
    assert rep.passed


def test_general_lemma_on_random_spec():
    rng = np.random.default_rng(7)
    spec = random_spec(rng, k=5, lam=0.3, alpha=0.3, K=1.0)
    rep = verify_contraction_lemma(spec, 0, 500, ContractionLemma.HAIRER_MATTINGLY, rng, radius=4 / 0.3, alpha0=0.15)
    assert rep.passed


def test_general_lemma_needs_large_radius():
    with pytest.raises(InvalidInput):
        lemma_constants(ContractionLemma.HAIRER_MATTINGLY, 0.3, 0.3, 1.0, radius=1.0, alpha0=0.1)


def test_false_hypotheses_rejected():
    P = np.array([[0.0, 1.0], [0.0, 1.0]])
    spec = spec_of(P, [0.5, 0.5], alpha=0.3, V=[0.0, 1.0])
    with pytest.raises(CertificateViolation):
        verify_contraction_lemma(spec, 0, 10, ContractionLemma.SMALL_SET, np.random.default_rng(0))


def test_identical_laws_zero_distance():
    spec = spec_of(np.full((2, 2), 0.5), [0.5, 0.5])
    r0, r1 = exact_tv_trajectory(spec, [0.3, 0.7], [0.3, 0.7], [0] * 6)
    assert np.all(r0 == 0) and np.all(r1 == 0)


def test_tv_decays_with_second_eigenvalue():
    P = np.array([[0.7, 0.3], [0.2, 0.8]])
    spec = spec_of(P, [0.4, 0.6], V=[0.0, 1.0])
    r0, _ = exact_tv_trajectory(spec, [1, 0], [0, 1], [0] * 20)
    second = sorted(np.abs(np.linalg.eigvals(P)))[0]
    assert second == pytest.approx(0.5, abs=1e-15)
    np.testing.assert_allclose(np.asarray(r0, float), 2 * 0.5 ** np.arange(21), rtol=0, atol=1e-15)


def test_rho1_within_envelope():
    rng = np.random.default_rng(12)
    for _ in range(10):
        spec = random_spec(rng, k=5)
        lam, K, alpha = float(spec.drift().lam(0)), float(spec.drift().K(0)), float(spec.minor().alpha(0))
        mu, mup = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5))
        _, r1 = exact_tv_trajectory(spec, mu, mup, [0] * 40)
        env = contraction_envelope(K, alpha, lam, float(r1[0]), 40)
        assert np.all(np.asarray(r1, float) <= env * (1 + 1e-12))


def test_stationary_distribution_two_state():
    pi = stationary_distribution([[0.5, 0.5], [0.7, 0.3]])
    np.testing.assert_allclose(np.asarray(pi, float), [7 / 12, 5 / 12], rtol=1e-15)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_stationary_is_invariant(seed):
    P = np.random.default_rng(seed).dirichlet(np.ones(4), size=4)
    pi = stationary_distribution(P)
    np.testing.assert_allclose(np.asarray(pi @ P, float), np.asarray(pi, float), atol=1e-14)
