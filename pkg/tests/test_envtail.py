import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from rechain.envtail import (
    EnvironmentProcess,
    TailBound,
    constant_environment,
    gaussian_moment,
    gaussian_tail,
    moment_order,
    moment_tail,
    moving_average,
    sample_env_path,
    sample_env_paths,
    validate_tail,
)
from rechain.errors import CapabilityError, InvalidInput
from rechain.streams import substream


# Gaussian tail pair

def test_gaussian_tail_at_ten():
    tb = gaussian_tail(c1=2 * math.sqrt(2), c2=1.0, b=0.5)
    assert tb.g_at(10) == 9
    assert tb.ell_at(10) == pytest.approx(2 * math.exp(-10))
    assert tb.ell_at(10) == pytest.approx(9.0800e-5, rel=1e-4)


def test_gaussian_tail_clamped_at_zero():
    assert gaussian_tail().ell_at(0) == 1.0


def test_gaussian_tail_linear_case():
    tb = gaussian_tail(c1=1.0, c2=1.0, b=1.0, prefactor=1.0)
    k = np.arange(1, 6)
    np.testing.assert_array_equal(tb.g_at(k), k)
    np.testing.assert_allclose(tb.ell_at(k), np.exp(-k**2.0))


def test_gaussian_tail_rejects_bad_exponent():
    with pytest.raises(InvalidInput):
        gaussian_tail(b=1.5)


def test_tail_bound_monotonicity_enforced():
    with pytest.raises(InvalidInput):
        TailBound(lambda t: 5000 - np.asarray(t), lambda t: np.exp(-np.asarray(t, float)))
    with pytest.raises(InvalidInput):
        TailBound(lambda t: np.asarray(t), lambda t: np.minimum(1, 0.01 * np.asarray(t, float)))


# moment tails

def test_gaussian_moment_matches_quadrature():
    for q in (1.0, 1.5, 2.0):
        m, _ = integrate.quad(lambda z: abs(z) ** (2 * q) * stats.norm.pdf(z), -np.inf, np.inf)
        assert gaussian_moment(q) == pytest.approx(m ** (1 / (2 * q)), rel=1e-10)


def test_moment_tail_standard_normal():
    tb = moment_tail(gaussian_moment, chi=1.0, r=1.0)
    assert tb.moment_order == pytest.approx(1.5)
    C = (2 * math.sqrt(2 / math.pi)) ** (1 / 3)
    assert C**3 == pytest.approx(1.5957691, abs=1e-7)
    for t in (2, 5, 40):
        assert tb.ell_at(t) == pytest.approx(min(1.0, C**1.5 / t), rel=1e-12)
        assert tb.g_at(t) == t


def test_moment_tail_bounded_variable():
    tb = moment_tail(lambda q: 1.0, chi=1.0, r=2.0)
    t = np.arange(1, 50)
    assert np.all(tb.ell_at(t) <= t**-2.0 + 1e-15)


def test_moment_tail_exponent_substitution():
    assert moment_order(2.0, 3.0) == pytest.approx(2.0)
    tb = moment_tail(gaussian_moment, chi=2.0, r=3.0)
    np.testing.assert_array_equal(tb.g_at(np.arange(1, 6)), np.arange(1, 6) ** 2)


@given(st.floats(0.05, 5.0), st.floats(1.0, 10.0))
def test_moment_order_gives_required_decay(chi, r):
    q = moment_order(chi, r)
    assert chi * q - 0.5 >= r - 1e-12
    if chi >= 1:
        assert q == pytest.approx(r / chi + 0.5)


def test_moment_tail_missing_moment():
    with pytest.raises(CapabilityError):
        moment_tail({1.0: 1.0}, chi=1.0, r=1.0)
    with pytest.raises(CapabilityError):
        moment_tail(lambda q: math.inf, chi=1.0, r=1.0)


# environment processes

def test_window_draw_is_reproducible():
    env = EnvironmentProcess()
    a = sample_env_path(env, 0, 0, substream(5, "env"))
    b = sample_env_path(env, 0, 0, substream(5, "env"))
    assert a.shape == (1, 1)
    np.testing.assert_array_equal(a, b)


def test_unit_moving_average_is_iid():
    env = moving_average([1.0])
    assert env.marginal_variance() == 1.0
    assert env.autocovariance(1) == 0.0
    x = sample_env_paths(env, 20000, 3, np.random.default_rng(1))
    assert np.var(x) == pytest.approx(1.0, abs=0.03)


def test_geometric_moving_average_variance():
    env = moving_average(lambda j: 2.0 ** -np.asarray(j, float), truncation=40)
    assert env.marginal_variance() == pytest.approx(4 / 3, rel=1e-12)
    x = sample_env_paths(env, 100_000, 1, np.random.default_rng(2))[:, 0, 0]
    var = np.var(x, ddof=1)
    # stderr of a Gaussian sample variance
    se = var * math.sqrt(2 / (x.size - 1))
    assert abs(var - 4 / 3) <= 3 * se


def test_moving_average_matches_naive_convolution():
    a = np.array([1.0, 0.5, -0.25, 0.125])
    env = moving_average(a)
    rng1, rng2 = np.random.default_rng(3), np.random.default_rng(3)
    out = sample_env_paths(env, 2, 300, rng1)
    w = rng2.standard_normal((2, 1, 303))
    for p in range(2):
        for t in range(300):
            naive = sum(a[j] * w[p, 0, t + 3 - j] for j in range(4))
            assert out[p, t, 0] == pytest.approx(naive, abs=1e-12)


def test_innovation_pairing():
    env = moving_average([0.0, 1.0], emit_innovations=True)
    assert env.dim == 2
    x = sample_env_paths(env, 1, 50, np.random.default_rng(4))[0]
    # xi_t = w_{t-1}
    np.testing.assert_allclose(x[1:, 1], x[:-1, 0])


def test_constant_environment():
    env = constant_environment(2.5, dim=2)
    x = sample_env_paths(env, 3, 4, np.random.default_rng(0))
    assert x.shape == (3, 4, 2) and np.all(x == 2.5)


def test_bad_window():
    with pytest.raises(InvalidInput):
        sample_env_path(EnvironmentProcess(), 3, 1, np.random.default_rng(0))


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=1, max_size=6), st.integers(0, 5))
def test_autocovariance_formula(coeffs, lag):
    env = moving_average(coeffs)
    a = np.asarray(coeffs)
    expected = sum(a[j] * a[j + lag] for j in range(len(a) - lag)) if lag < len(a) else 0.0
    assert env.autocovariance(lag) == pytest.approx(expected, abs=1e-12)


# validation

def test_validate_gaussian_pair():
    rep = validate_tail(EnvironmentProcess(), gaussian_tail(), [10], trials=100_000, seed=11)
    assert rep.passed
    assert isinstance(rep.rows[0].frequency, float)


def test_validate_deterministic_zero():
    rep = validate_tail(constant_environment(0.0), gaussian_tail(), [1, 5, 10], trials=1000, seed=0)
    assert rep.passed
    assert all(r.count == 0 for r in rep.rows)


def test_validate_adversarial_point_fails():
    tb = gaussian_tail()
    g10 = tb.g_at(10)
    rep = validate_tail(constant_environment(float(g10)), tb, [10], trials=1000, seed=0)
    assert not rep.passed
    assert rep.rows[0].frequency == 1.0


def test_validate_needs_trials():
    with pytest.raises(InvalidInput):
        validate_tail(EnvironmentProcess(), gaussian_tail(), [10], trials=10)
