import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rechain.certificates import RadiusFactor
from rechain.config import (
    Formula,
    build_certificates,
    build_environment,
    build_model,
    build_rate_inputs,
    build_setup,
    canonical_hash,
    config_from_dict,
    level_map,
    load_config,
    named_model,
    state_function,
)
from rechain.envtail import EnvKind
from rechain.errors import InvalidConfiguration
from rechain.models import ContractionModel, FsvModel, VolatilityModel
from rechain.oracle import FiniteChainSpec

CONFIGS = __import__("pathlib").Path(__file__).resolve().parents[1] / "configs"


def test_formula_arithmetic():
    f = Formula("min(1/3, 12*log(max(n, 3))/max(n, 3))", ("n",))
    n = np.array([0.0, 3.0, 100.0])
    np.testing.assert_allclose(f(n), np.minimum(1 / 3, 12 * np.log(np.maximum(n, 3)) / np.maximum(n, 3)))


def test_formula_conditional_is_vectorized():
    f = Formula("1 if r < 3 else r**2", ("r",))
    np.testing.assert_allclose(f(np.array([1.0, 4.0])), [1.0, 16.0])


@pytest.mark.parametrize("text", ["__import__('os')", "n.real", "[n]", "open('x')", "lambda: 1", "'a'"])
def test_formula_rejects_unsafe_syntax(text):
    with pytest.raises(InvalidConfiguration):
        Formula(text, ("n",))


def test_formula_unknown_name():
    with pytest.raises(InvalidConfiguration):
        Formula("k + 1", ("n",))


@given(st.floats(-100, 100), st.floats(-100, 100))
def test_formula_matches_python(a, b):
    f = Formula("abs(x - y) + max(x, y) * 2", ("x", "y"))
    assert float(f(a, b)) == pytest.approx(abs(a - b) + max(a, b) * 2)


def test_level_map_forms():
    assert level_map(0.25, "lam")(7) == 0.25
    tab = level_map([[0, 0.3], [4, 0.1]], "lam")
    assert tab(3) == 0.3 and tab(5) == 0.1
    assert level_map("1/(n+1)", "lam")(3) == pytest.approx(0.25)


def test_canonical_hash_ignores_key_order():
    assert canonical_hash({"a": 1, "b": [1, 2]}) == canonical_hash({"b": [1, 2], "a": 1})
    assert canonical_hash({"a": 1}) != canonical_hash({"a": 2})


def test_seed_required():
    with pytest.raises(InvalidConfiguration):
        config_from_dict({"run": {}})
    with pytest.raises(InvalidConfiguration):
        config_from_dict({"run": {"seed": -1}})
    with pytest.raises(InvalidConfiguration):
        config_from_dict({"run": {"seed": "7"}})
    assert config_from_dict({"run": {"seed": 7}}).seed == 7


def test_missing_data_file(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('[run]\nseed = 1\n[model]\nkind = "fsv"\nma_coeffs_file = "nope.txt"\n')
    with pytest.raises(InvalidConfiguration):
        load_config(p)


def test_named_models():
    assert isinstance(named_model("desk"), ContractionModel)
    assert isinstance(named_model("volatility"), VolatilityModel)
    assert isinstance(named_model("fsv"), FsvModel)
    assert isinstance(named_model("two-state"), FiniteChainSpec)
    with pytest.raises(InvalidConfiguration):
        named_model("nothing")


@pytest.mark.parametrize("name", ["desk", "log_profile", "volatility", "fsv", "two_state"])
def test_shipped_configs_build(name):
    cfg = load_config(CONFIGS / f"{name}.toml")
    model = build_model(cfg)
    setup = build_setup(cfg, model)
    env = build_environment(cfg, model)
    assert setup.drift.lam(1) > 0 and setup.minor.alpha(1) > 0
    assert env.dim >= 1


def test_fsv_config_uses_coefficient_file():
    cfg = load_config(CONFIGS / "fsv.toml")
    model = build_model(cfg)
    assert len(model.ma_coeffs) == 41
    env = build_environment(cfg, model)
    assert env.kind is EnvKind.GAUSSIAN_MOVING_AVERAGE and env.dim == 2


def test_rate_inputs_from_formulas():
    cfg = load_config(CONFIGS / "rates_slow_contraction.toml")
    inp = build_rate_inputs(cfg)
    assert inp.tail.g_at(50) == 50
    assert inp.tail.ell_at(50) == 0.0
    assert inp.drift.lam(1000) == pytest.approx(12 * math.log(1000) / 1000)


def test_certificate_mode_given():
    cfg = config_from_dict({
        "run": {"seed": 1},
        "model": {"id": "desk"},
        "certificates": {"mode": "given", "lam": 0.3, "K": 2, "alpha": [[0, 0.2], [5, 0.1]],
                         "radius_factor": 8},
    })
    drift, minor = build_certificates(cfg, build_model(cfg))
    assert drift.K(0) == 2.0 and minor.alpha(6) == 0.1
    assert minor.radius_factor is RadiusFactor.EIGHT
    # nu is uniform on the small set [-R(n), R(n)]
    assert minor.nu.mass(0, -minor.radius(0, drift), minor.radius(0, drift)) == pytest.approx(1.0)


def test_bad_model_kind():
    with pytest.raises(InvalidConfiguration):
        build_model(config_from_dict({"run": {"seed": 1}, "model": {"kind": "quantum"}}))


def test_state_function():
    phi = state_function("min(abs(x), 10)")
    np.testing.assert_allclose(phi(np.array([-20.0, 3.0])), [10.0, 3.0])
