import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rechain.config import two_state_spec
from rechain.envtail import EnvironmentProcess, constant_environment
from rechain.errors import InvalidInput, PreconditionError
from rechain.mixing import (
    GammaMethod,
    check_moment_inequality,
    coupling_burn_in,
    estimate_gamma_by_restart,
    iid_gamma_reports,
    lln_experiment,
    simulate_chain,
)
from rechain.models import desk_contraction, example_contraction
from rechain.oracle import stationary_distribution
from rechain.stats import jackknife_lp


def gaussian(rng, size):
    return rng.standard_normal(size)


def test_iid_surrogate_vs_exact():
    sur, exact = iid_gamma_reports(gaussian, 2.0, [0, 1, 2, 5], trials=200_000, seed=1)
    assert exact.method is GammaMethod.IID_EXACT
    assert sur.method is GammaMethod.RESTART_SURROGATE
    np.testing.assert_allclose(exact.gamma[1:], 0.0)
    assert exact.gamma[0] == pytest.approx(1.0, abs=0.01)
    # independent copies: 2 E^{1/2}|eps - eps'|^2 = 2 sqrt 2
    np.testing.assert_allclose(sur.surrogate[1:], 2 * math.sqrt(2), rtol=0.01)
    assert sur.Gamma_r > exact.Gamma_r


def test_iid_needs_trials():
    with pytest.raises(PreconditionError):
        iid_gamma_reports(gaussian, 2.0, [0, 1], trials=10, seed=0)


def test_full_contraction_couples_in_one_step():
    setup = desk_contraction().certified()
    rep = estimate_gamma_by_restart(setup, EnvironmentProcess(), lambda x: x, 2.0, 5, [0, 1, 2, 4], trials=2000,
                                    seed=3, x0=0.0, anchor=4.0)
    assert rep.gamma[0] > 0
    np.testing.assert_array_equal(rep.gamma[1:], 0.0)


def test_contraction_gamma_decays():
    setup = example_contraction().certified()
    rep = estimate_gamma_by_restart(setup, EnvironmentProcess(), lambda x: np.minimum(np.abs(x), 10), 2.0, 10,
                                    [0, 2, 4, 8, 16], trials=1000, seed=3, x0=0.0, anchor=3.0)
    assert rep.gamma[-1] < rep.gamma[0]
    assert math.isfinite(rep.Gamma_r)


def test_bounded_functional_capped():
    setup = example_contraction().certified()
    rep = estimate_gamma_by_restart(setup, EnvironmentProcess(), np.sign, 2.0, [0, 5], [0, 1, 3], trials=1000,
                                    seed=4, x0=2.0, anchor=-2.0, horizon=10)
    assert np.all(rep.gamma <= 2.0 + 1e-12)
    assert rep.M_r <= 1.0
    # omitted lags of the horizon are charged the cap 2 M_r
    assert rep.Gamma_cap == pytest.approx(2 * rep.M_r * 8)


def test_restart_validation():
    setup = desk_contraction().certified()
    with pytest.raises(PreconditionError):
        estimate_gamma_by_restart(setup, EnvironmentProcess(), np.sign, 2.0, 0, [0], trials=5, seed=0)


def test_moment_ratio_iid_constant():
    rademacher = lambda rng, n, L: rng.choice([-1.0, 1.0], size=(n, L))
    rep = check_moment_inequality(rademacher, 2.0, [100, 1000, 10000], trials=1000, seed=2, Gamma_r=1.0, M_r=1.0)
    # exact L2 arithmetic: E|S_N|^2 = N, so the ratio is 1
    np.testing.assert_allclose(rep.ratio, 1.0, atol=4 * rep.stderr.max())
    assert rep.passed and not rep.centered


def test_moment_ratio_alternating_vanishes():
    alt = lambda rng, n, L: np.tile((-1.0) ** np.arange(L), (n, 1))
    rep = check_moment_inequality(alt, 2.0, [101, 1001, 10001], trials=10, seed=0, Gamma_r=1.0, M_r=1.0)
    assert rep.slope == pytest.approx(-0.5, abs=0.01)
    assert rep.ratio[-1] < rep.ratio[0]


def test_moment_ratio_contraction_flat():
    model = example_contraction()

    def sampler(rng, n, L):
        env = rng.standard_normal((n, L, 1))
        x = simulate_chain(model, env, 0.0, rng.random((n, L)))
        return np.minimum(np.abs(x[:, 1:]), 10)

    rep = check_moment_inequality(sampler, 2.0, [100, 1000, 3000], trials=300, seed=5, Gamma_r=8.0)
    assert rep.centered
    assert rep.passed


def test_moment_ratio_validation():
    with pytest.raises(InvalidInput):
        check_moment_inequality(lambda rng, n, L: np.zeros((n, L)), 1.5, [10], 10, 0, Gamma_r=1.0)
    with pytest.raises(InvalidInput):
        check_moment_inequality(lambda rng, n, L: np.zeros((n, L)), 2.0, [10], 10, 0, Gamma_r=0.0)


def test_constant_functional_has_zero_error():
    spec = two_state_spec()
    setup = spec.certified()
    rep = lln_experiment(setup, setup, constant_environment(), lambda x: np.ones_like(x), 0.5, 2.0,
                         [10, 100], trials=20, seed=0, reference=1.0, bounded=True)
    np.testing.assert_array_equal(rep.lp_error, 0.0)


def test_two_state_indicator_matches_stationary():
    spec = two_state_spec()
    setup = spec.certified()
    pi1 = float(stationary_distribution(spec.matrix(0))[1])
    assert pi1 == pytest.approx(5 / 12)
    rep = lln_experiment(setup, setup, constant_environment(), lambda x: (x == 1).astype(float), 0.5, 2.0,
                         [100, 1000, 10000], trials=20, seed=1, reference=pi1, bounded=True)
    se = math.sqrt(pi1 * (1 - pi1) / 10000)
    assert abs(rep.mean_average[-1] - pi1) <= 3 * se / math.sqrt(20) * 3
    assert rep.lp_error[-1] <= 3 * se


def test_desk_error_decreasing():
    model = desk_contraction()
    setup = model.certified()
    rep = lln_experiment(model, setup, EnvironmentProcess(), lambda x: np.minimum(np.abs(x), 10), 0.5, 2.0,
                         [100, 1000, 10000], trials=60, seed=2, bounded=True, anchor=3.0)
    assert rep.decreasing
    assert rep.shape_slope < -0.3
    assert rep.burn_in >= 10
    assert not rep.covered and "not checked" in rep.note


def test_lln_needs_anchor_or_reference():
    setup = two_state_spec().certified()
    with pytest.raises(InvalidInput):
        lln_experiment(setup, setup, constant_environment(), lambda x: x, 0.5, 2.0, [10], trials=5, seed=0)


def test_lln_rejects_large_p_for_unbounded():
    setup = two_state_spec().certified()
    with pytest.raises(InvalidInput):
        lln_experiment(setup, setup, constant_environment(), lambda x: x, 0.5, 3.0, [10], trials=5, seed=0,
                       reference=0.0)


def test_burn_in_is_ten_times_quantile():
    setup = two_state_spec().certified()
    b = coupling_burn_in(setup, constant_environment(), 0.0, 1.0, 200, seed=0)
    assert b % 10 == 0 and 10 <= b <= 200


def test_simulate_chain_finite_matches_rows():
    setup = two_state_spec().certified()
    rng = np.random.default_rng(0)
    n = 50_000
    x = simulate_chain(setup, np.zeros((n, 1, 1)), 1.0, rng.random((n, 1)))
    freq = float(np.mean(x[:, 1] == 0))
    assert abs(freq - 0.7) <= 4 * math.sqrt(0.21 / n)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=5, max_size=60), st.sampled_from([1.0, 2.0, 3.0]))
def test_jackknife_close_to_plain_moment(xs, p):
    a = np.asarray(xs)
    est, se = jackknife_lp(a, p)
    plain = float(np.mean(np.abs(a) ** p) ** (1 / p))
    assert est >= 0
    assert abs(est - plain) <= plain + 1e-12
