import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from rechain.certificates import check_drift, check_minorization
from rechain.errors import InvalidConfiguration
from rechain.models import (
    ContractionModel,
    FsvModel,
    GaussianNoise,
    LaplaceNoise,
    ParetoNoise,
    RateStatus,
    TailKind,
    VolatilityModel,
    delta_profile_rate_study,
    desk_contraction,
    example_contraction,
    example_fsv,
    example_volatility,
    log_profile,
    noise_from_name,
    simulate_model,
)


NOISES = [GaussianNoise(), LaplaceNoise(), ParetoNoise(4.0), ParetoNoise(3.5, 2.0)]


# noise laws

@pytest.mark.parametrize("noise", NOISES, ids=lambda n: type(n).__name__)
@pytest.mark.parametrize("mu", [0.0, 0.7, -2.5])
def test_abs_shift_mean_matches_quadrature(noise, mu):
    f = lambda z: abs(mu + z) * noise.pdf(z)
    oracle = integrate.quad(f, -np.inf, -mu, limit=400)[0] + integrate.quad(f, -mu, np.inf, limit=400)[0]
    assert noise.abs_shift_mean(mu) == pytest.approx(oracle, rel=1e-7)


@pytest.mark.parametrize("noise", NOISES, ids=lambda n: type(n).__name__)
def test_density_integrates_and_cdf_consistent(noise):
    total, _ = integrate.quad(noise.pdf, -np.inf, np.inf)
    assert total == pytest.approx(1.0, abs=1e-9)
    for x in (-3.0, -0.4, 0.0, 1.2, 6.0):
        part, _ = integrate.quad(noise.pdf, -np.inf, x)
        assert noise.cdf(x) == pytest.approx(part, abs=1e-9)
        assert noise.sf(x) == pytest.approx(1 - part, abs=1e-9)


@pytest.mark.parametrize("noise", NOISES, ids=lambda n: type(n).__name__)
@settings(max_examples=30, deadline=None)
@given(st.floats(1e-9, 1 - 1e-9))
def test_ppf_inverts_cdf(noise, p):
    assert noise.cdf(noise.ppf(p)) == pytest.approx(p, rel=1e-7, abs=1e-12)


def test_gaussian_abs_mean():
    assert GaussianNoise().abs_mean() == pytest.approx(math.sqrt(2 / math.pi))


def test_pareto_mean_and_regime():
    assert ParetoNoise(4.0).abs_mean() == pytest.approx(0.5)
    with pytest.raises(InvalidConfiguration):
        ParetoNoise(2.0)


def test_noise_names():
    assert isinstance(noise_from_name("normal"), GaussianNoise)
    assert isinstance(noise_from_name("laplace"), LaplaceNoise)
    assert noise_from_name("pareto", chi=5).chi == 5
    with pytest.raises(InvalidConfiguration):
        noise_from_name("cauchy")


# dynamics

def test_full_contraction_forgets_state():
    m = desk_contraction()
    y = np.array([[0.3], [0.3]])
    out = m.step(y, np.array([-4.0, 9.0]), np.array([0.25, 0.25]))
    assert out[0] == out[1] == pytest.approx(0.25)


def test_half_contraction_arithmetic():
    m = ContractionModel.constant(0.5, 1.0, GaussianNoise())
    assert m.step(np.array([[1.0]]), np.array([2.0]), np.array([0.3]))[0] == pytest.approx(1.3)


def test_fsv_without_leverage():
    m = FsvModel(rho=0.0, delta=0.5, ma_coeffs=(1.0,), noise_tail_exponent=4.0)
    y = np.array([[0.7, -0.2]])
    assert m.step(y, np.array([3.0]), np.array([0.4]))[0] == pytest.approx(1.5 + math.exp(-0.2) * 0.4)


def test_fsv_leverage_term():
    m = FsvModel(rho=-0.5, delta=0.5, ma_coeffs=(1.0,), noise_tail_exponent=4.0)
    y = np.array([[0.7, 0.1]])
    expected = 0.5 * 2 - 0.5 * math.exp(0.1) * 0.7 + math.sqrt(0.75) * math.exp(0.1) * 0.2
    assert m.step(y, np.array([2.0]), np.array([0.2]))[0] == pytest.approx(expected)


def test_simulate_model_shapes(rng):
    m = example_volatility()
    out = simulate_model(m, np.zeros((4, 6, 1)), rng)
    assert out.shape == (4, 7) and np.all(out[:, 0] == 0.0)


def test_kernel_cdf_matches_sampler(rng):
    m = example_contraction()
    k = m.kernel()
    y = np.full((20000, 1), 2.0)
    x = np.full(20000, 1.0)
    draws = k.sample(y, x, rng)
    stat = stats.kstest(draws, lambda r: k.cdf(np.full((np.size(r), 1), 2.0), np.full(np.size(r), 1.0), r)).statistic
    assert stat < math.sqrt(math.log(2 / 0.01) / 40000)


# certificates

def test_contraction_K_is_one():
    drift, _ = desk_contraction().derive_certificates()
    assert drift.K(0) == 1.0 and drift.K(50) == 1.0


def test_contraction_alpha_is_small_set_bound():
    m = desk_contraction()
    drift, minor = m.derive_certificates()
    for n in (0, 1, 2):
        R = 4 * drift.K(n) / drift.lam(n)
        # normalised uniform: m(eta) = f(2 eta / s_lo) / s_hi with eta = R
        m_eta = stats.norm.pdf(2 * R / 1.0) / 1.0
        assert minor.alpha(n) == pytest.approx(min(1 / 3, 2 * R * m_eta), rel=1e-12)


def test_gaussian_exponent_bounds_alpha():
    m = example_contraction()
    c3 = m.gaussian_exponent()
    drift, minor = m.derive_certificates()
    for n in range(0, 12):
        R = float(minor.radius(n, drift))
        assert minor.alpha(n) >= math.exp(-c3 * R * R) * (1 - 1e-12)


def test_fsv_K_at_one():
    m = example_fsv()
    drift, _ = m.derive_certificates()
    assert m.c8 == pytest.approx(0.5)
    assert drift.K(1) == pytest.approx(m.c8 * math.e * 2)


def test_fsv_regime():
    with pytest.raises(InvalidConfiguration):
        FsvModel(rho=0.1, delta=0.5, ma_coeffs=(1.0,), noise_tail_exponent=3.0)


def test_volatility_regime():
    with pytest.raises(InvalidConfiguration):
        VolatilityModel(delta=0.0, G=lambda r: 1 + r, c5=1, c6=1)


def test_certificates_monotone():
    for model in (example_contraction(), example_volatility(), example_fsv()):
        drift, minor = model.derive_certificates()
        n = np.arange(0, 200)
        assert np.all(np.diff(drift.lam(n)) <= 0)
        assert np.all(np.diff(drift.K(n)) >= 0)
        a = minor.alpha(n)
        assert np.all(np.diff(a) <= 0) and np.all(a > 0)


@pytest.mark.parametrize("make", [example_contraction, example_volatility], ids=["contraction", "volatility"])
def test_drift_and_minorization_hold(make, rng):
    model = make()
    setup = model.certified()
    probes = [(y, x) for y in (0.0, 0.5, 2.5, 7.0) for x in (-30.0, -2.0, 0.0, 1.0, 12.0)]
    rep = check_drift(setup.kernel, setup.drift, probes, mc_samples=4000, rng=rng)
    assert rep.passed
    for n in (1, 2, 3):
        R = float(setup.radius(n))
        m = check_minorization(setup.kernel, setup.drift, setup.minor, float(n), np.linspace(-R, R, 9),
                               np.linspace(-R, R, 17))
        assert m.passed


def test_fsv_drift_and_minorization(rng):
    setup = example_fsv().certified()
    probes = [((w, xi), x) for w in (-1.0, 0.5) for xi in (-0.5, 0.8) for x in (-5.0, 0.0, 20.0)]
    assert check_drift(setup.kernel, setup.drift, probes, mc_samples=4000, rng=rng).passed
    for n in (1, 2, 3):
        R = float(setup.radius(n))
        y = (n / math.sqrt(2), n / math.sqrt(2))
        m = check_minorization(setup.kernel, setup.drift, setup.minor, y, np.linspace(-R, R, 7),
                               np.linspace(-R, R, 13))
        assert m.passed


# profile study

def test_log_profile_shape():
    prof = log_profile(0.25)
    assert prof(0.0) == 1.0 and prof(2.9) == 1.0
    assert prof(100.0) == pytest.approx(math.log(100.0) ** -0.25)


def test_profile_gaussian_summable():
    rep = delta_profile_rate_study(example_contraction(0.25), 0.25)
    assert rep.summable and rep.r3.status is RateStatus.CONVERGED
    assert math.isfinite(rep.r3.value) and rep.threshold == 0.5


def test_profile_exponential_summable():
    model = ContractionModel(delta=log_profile(0.75), sigma=lambda ys, xs: np.ones(np.shape(xs)),
                             sigma_lo=1.0, sigma_hi=1.0, noise=LaplaceNoise())
    rep = delta_profile_rate_study(model, 0.75)
    assert rep.tail is TailKind.EXPONENTIAL and rep.summable and rep.threshold == 1.0


def test_profile_gaussian_divergent():
    rep = delta_profile_rate_study(example_contraction(2.0), 2.0)
    assert rep.divergence_evidence and not rep.summable


def test_profile_rejects_heavy_tails():
    model = ContractionModel.constant(0.5, 1.0, ParetoNoise(4.0))
    with pytest.raises(InvalidConfiguration):
        delta_profile_rate_study(model, 0.25)
