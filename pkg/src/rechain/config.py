"""Experiment configuration: TOML loading, formula maps and object builders.

A config has the sections ``run`` (seed is mandatory), ``model``,
``certificates``, ``environment`` (with an optional ``tail`` subtable),
``output`` and one optional section per subcommand.  Level maps may be
numbers, ``[[level, value], ...]`` tables or formula strings such as
``"min(1/3, 12*log(n)/n)"``; formulas are parsed into a whitelisted
expression tree and evaluated with numpy, never with ``eval``.
"""

from __future__ import annotations

import ast
import hashlib
import json
import math
import operator
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import models as M
from .certificates import (
    CertifiedKernel,
    DriftCertificate,
    MinorizationCertificate,
    RadiusFactor,
    Tabulated,
    UniformNu,
    constant,
)
from .envtail import (
    EnvironmentProcess,
    TailBound,
    constant_environment,
    gaussian_moment,
    gaussian_tail,
    moment_tail,
    moving_average,
)
from .errors import InvalidConfiguration
from .oracle import FiniteChainSpec
from .rates import RateInputs

# ---------------------------------------------------------------------------
# formulas

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
    ast.Mod: operator.mod,
}
_CMPOPS = {ast.Lt: operator.lt, ast.LtE: operator.le, ast.Gt: operator.gt, ast.GtE: operator.ge}
_FUNCS = {
    "log": np.log,
    "log1p": np.log1p,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "floor": np.floor,
    "ceil": np.ceil,
    "sin": np.sin,
    "cos": np.cos,
    "tanh": np.tanh,
}
_CONSTS = {"pi": math.pi, "e": math.e, "inf": math.inf}


def _fold(fn):
    def call(*args):
        if len(args) < 2:
            raise InvalidConfiguration("min/max need at least two arguments")
        out = args[0]
        for a in args[1:]:
            out = fn(out, a)
        return out

    return call


_FUNCS["min"] = _fold(np.minimum)
_FUNCS["max"] = _fold(np.maximum)


class Formula:
    """Vectorized arithmetic expression in a fixed set of variables.

    Supported: numbers, the named variables, ``pi``, ``e``, ``+ - * / ** %``,
    comparisons, ``a if cond else b`` and the functions ``log, log1p, exp,
    sqrt, abs, floor, ceil, sin, cos, tanh, min, max``.
    """

    def __init__(self, text: str, variables: tuple):
        self.text = str(text)
        self.variables = tuple(variables)
        try:
            tree = ast.parse(self.text, mode="eval")
        except SyntaxError as exc:
            raise InvalidConfiguration(f"cannot parse formula {self.text!r}: {exc.msg}") from None
        self._check(tree.body)
        self.tree = tree.body

    def _check(self, node):
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise InvalidConfiguration(f"formula {self.text!r}: only numeric constants are allowed")
        elif isinstance(node, ast.Name):
            if node.id not in self.variables and node.id not in _CONSTS:
                raise InvalidConfiguration(f"formula {self.text!r}: unknown name {node.id!r}")
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise InvalidConfiguration(f"formula {self.text!r}: operator not allowed")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise InvalidConfiguration(f"formula {self.text!r}: operator not allowed")
            self._check(node.operand)
        elif isinstance(node, ast.Compare):
            if len(node.ops) != 1 or type(node.ops[0]) not in _CMPOPS:
                raise InvalidConfiguration(f"formula {self.text!r}: only single comparisons are allowed")
            self._check(node.left)
            self._check(node.comparators[0])
        elif isinstance(node, ast.IfExp):
            for part in (node.test, node.body, node.orelse):
                self._check(part)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or node.keywords:
                raise InvalidConfiguration(f"formula {self.text!r}: function not allowed")
            for a in node.args:
                self._check(a)
        else:
            raise InvalidConfiguration(f"formula {self.text!r}: unsupported syntax {type(node).__name__}")

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id] if node.id in env else _CONSTS[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Compare):
            return _CMPOPS[type(node.ops[0])](self._eval(node.left, env), self._eval(node.comparators[0], env))
        if isinstance(node, ast.IfExp):
            return np.where(self._eval(node.test, env), self._eval(node.body, env), self._eval(node.orelse, env))
        return _FUNCS[node.func.id](*(self._eval(a, env) for a in node.args))

    def __call__(self, *args):
        if len(args) != len(self.variables):
            raise TypeError(f"formula takes {len(self.variables)} arguments")
        env = {k: np.asarray(v, dtype=float) for k, v in zip(self.variables, args)}
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = self._eval(self.tree, env)
        shape = np.broadcast(*env.values()).shape if env else ()
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy() if shape else np.asarray(out, dtype=float)


def level_map(value, name: str, var: str = "n"):
    """Number, ``[[level, value], ...]`` table or formula string -> level map."""
    if isinstance(value, bool):
        raise InvalidConfiguration(f"{name}: expected a number, table or formula")
    if isinstance(value, (int, float)):
        return constant(float(value))
    if isinstance(value, str):
        return Formula(value, (var,))
    if isinstance(value, list):
        try:
            return Tabulated.from_pairs([(int(a), float(b)) for a, b in value])
        except (TypeError, ValueError) as exc:
            raise InvalidConfiguration(f"{name}: tables must be [[level, value], ...] pairs") from exc
    raise InvalidConfiguration(f"{name}: expected a number, table or formula")


# ---------------------------------------------------------------------------
# loading


@dataclass(frozen=True)
class ExperimentConfig:
    data: dict
    path: Optional[Path]
    sha256: str

    @property
    def seed(self) -> int:
        return int(self.data["run"]["seed"])

    def section(self, name: str) -> dict:
        return dict(self.data.get(name, {}))

    @property
    def output_dir(self) -> Optional[Path]:
        d = self.data.get("output", {}).get("directory")
        if d is None:
            return None
        p = Path(d)
        return p if p.is_absolute() or self.path is None else self.path.parent / p


def canonical_hash(data: dict) -> str:
    """SHA-256 of the canonical JSON form (sorted keys, no whitespace)."""
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _resolve_files(data: dict, base: Path):
    """Inline ``*_file`` entries that list whitespace-separated reals."""
    for sec in data.values():
        if not isinstance(sec, dict):
            continue
        for key in [k for k in sec if k.endswith("_file")]:
            p = Path(sec[key])
            p = p if p.is_absolute() else base / p
            if not p.is_file():
                raise InvalidConfiguration(f"referenced file {str(p)!r} does not exist")
            try:
                vals = [float(tok) for tok in p.read_text().replace(",", " ").split()]
            except ValueError as exc:
                raise InvalidConfiguration(f"file {str(p)!r} must contain real numbers") from exc
            sec[key[: -len("_file")]] = vals
            del sec[key]
        for v in sec.values():
            if isinstance(v, dict):
                _resolve_files({"_": v}, base)


def config_from_dict(data: dict, path: Optional[Path] = None) -> ExperimentConfig:
    data = json.loads(json.dumps(data))
    _resolve_files(data, path.parent if path else Path.cwd())
    run = data.get("run")
    if not isinstance(run, dict) or "seed" not in run:
        raise InvalidConfiguration("the [run] section must set seed")
    seed = run["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise InvalidConfiguration("seed must be a nonnegative integer")
    return ExperimentConfig(data, path, canonical_hash(data))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise InvalidConfiguration(f"config file {str(path)!r} not found")
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise InvalidConfiguration(f"malformed config: {exc}") from None
    return config_from_dict(data, path)


# ---------------------------------------------------------------------------
# builders


def _need(sec: dict, key: str, where: str):
    if key not in sec:
        raise InvalidConfiguration(f"[{where}] needs {key!r}")
    return sec[key]


def _radial_formula(value, name):
    """Number or formula in ``r`` (radius) for profile maps."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        v = float(value)
        return lambda r: np.full(np.shape(r), v)
    if isinstance(value, str):
        return Formula(value, ("r",))
    raise InvalidConfiguration(f"{name}: expected a number or a formula in r")


def _state_formula(value, name):
    """Number or formula in ``r`` (environment radius) and ``x`` (state)."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        v = float(value)
        return lambda ys, xs: np.full(np.shape(xs), v)
    if isinstance(value, str):
        f = Formula(value, ("r", "x"))

        def sigma(ys, xs):
            ys = np.asarray(ys, dtype=float).reshape(len(np.atleast_1d(xs)), -1)
            return f(np.sqrt(np.sum(ys * ys, axis=1)), xs)

        return sigma
    raise InvalidConfiguration(f"{name}: expected a number or a formula in r and x")


def build_noise(sec: dict):
    return M.noise_from_name(sec.get("noise", "gaussian"), sec.get("chi"), float(sec.get("noise_scale", 1.0)))


NAMED_MODELS = ("desk", "log-profile", "volatility", "fsv", "two-state")


def named_model(name: str):
    """Built-in instances selectable by id."""
    if name == "desk":
        return M.desk_contraction()
    if name == "log-profile":
        return M.example_contraction()
    if name == "volatility":
        return M.example_volatility()
    if name == "fsv":
        return M.example_fsv()
    if name == "two-state":
        return two_state_spec()
    raise InvalidConfiguration(f"unknown model id {name!r}; choose from {', '.join(NAMED_MODELS)}")


def two_state_spec() -> FiniteChainSpec:
    """Constant-environment chain on {0, 1} with stationary law (7/12, 5/12)."""
    return FiniteChainSpec(
        V=[0.0, 1.0],
        kernels={0: [[0.5, 0.5], [0.7, 0.3]]},
        lam=1.0 / 3.0,
        K=1.0,
        alpha=1.0 / 3.0,
        nu=[0.6, 0.4],
    )


def build_model(cfg: ExperimentConfig):
    """Model object (or finite spec) described by ``[model]``."""
    sec = cfg.section("model")
    if "id" in sec:
        return named_model(sec["id"])
    kind = _need(sec, "kind", "model")
    try:
        if kind == "contraction":
            sig = sec.get("sigma", 1.0)
            if isinstance(sig, str):
                lo, hi = float(_need(sec, "sigma_lo", "model")), float(_need(sec, "sigma_hi", "model"))
            else:
                lo = hi = float(sig)
            return M.ContractionModel(
                delta=_radial_formula(_need(sec, "delta", "model"), "delta"),
                sigma=_state_formula(sig, "sigma"),
                sigma_lo=lo,
                sigma_hi=hi,
                noise=build_noise(sec),
                x0=float(sec.get("x0", 0.0)),
            )
        if kind == "volatility":
            sig = sec.get("sigma")
            return M.VolatilityModel(
                delta=float(_need(sec, "delta", "model")),
                G=_radial_formula(_need(sec, "G", "model"), "G"),
                c5=float(_need(sec, "c5", "model")),
                c6=float(_need(sec, "c6", "model")),
                noise=build_noise(sec),
                sigma=None if sig is None else _state_formula(sig, "sigma"),
                x0=float(sec.get("x0", 0.0)),
            )
        if kind == "fsv":
            return M.FsvModel(
                rho=float(_need(sec, "rho", "model")),
                delta=float(_need(sec, "delta", "model")),
                ma_coeffs=tuple(_need(sec, "ma_coeffs", "model")),
                noise_tail_exponent=float(_need(sec, "chi", "model")),
                noise_scale=float(sec.get("noise_scale", 1.0)),
                x0=float(sec.get("x0", 0.0)),
            )
        if kind == "finite":
            mats = _need(sec, "matrices", "model")
            return FiniteChainSpec(
                V=_need(sec, "V", "model"),
                kernels={int(k): v for k, v in dict(mats).items()},
                lam=level_map(_need(sec, "lam", "model"), "lam"),
                K=level_map(_need(sec, "K", "model"), "K"),
                alpha=level_map(_need(sec, "alpha", "model"), "alpha"),
                nu=_need(sec, "nu", "model"),
                radius_factor=RadiusFactor(int(sec.get("radius_factor", 4))),
            )
    except InvalidConfiguration:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise InvalidConfiguration(f"[model] {kind}: {exc}") from exc
    raise InvalidConfiguration(f"unknown model kind {kind!r}")


def build_certificates(cfg: ExperimentConfig, model=None):
    """``(drift, minor)`` from ``[certificates]``: derived or given as level maps."""
    sec = cfg.section("certificates")
    mode = sec.get("mode", "derive")
    factor = RadiusFactor(int(sec.get("radius_factor", 4)))
    if mode == "derive":
        if model is None:
            raise InvalidConfiguration("certificates mode 'derive' needs a [model] section")
        if isinstance(model, FiniteChainSpec):
            if factor is not model.radius_factor:
                model = FiniteChainSpec(model.V, model.kernels, model.lam, model.K, model.alpha, model.nu, factor)
            return model.drift(), model.minor()
        return model.derive_certificates(factor)
    if mode in ("tabulated", "formula", "given"):
        drift = DriftCertificate(
            lam=level_map(_need(sec, "lam", "certificates"), "lam"),
            K=level_map(_need(sec, "K", "certificates"), "K"),
        )

        def half_width(n):
            return int(factor) * drift.K(n) / drift.lam(n)

        minor = MinorizationCertificate(
            alpha=level_map(_need(sec, "alpha", "certificates"), "alpha"),
            nu=UniformNu(half_width),
            radius_factor=factor,
        )
        return drift, minor
    raise InvalidConfiguration(f"unknown certificates mode {mode!r}")


def build_setup(cfg: ExperimentConfig, model=None) -> CertifiedKernel:
    model = build_model(cfg) if model is None else model
    drift, minor = build_certificates(cfg, model)
    kernel = model.certified().kernel if isinstance(model, FiniteChainSpec) else model.kernel()
    return CertifiedKernel(kernel, drift, minor)


def build_environment(cfg: ExperimentConfig, model=None) -> EnvironmentProcess:
    sec = cfg.section("environment")
    sec.pop("tail", None)
    if not sec:
        if isinstance(model, M.FsvModel):
            return model.environment()
        if isinstance(model, FiniteChainSpec):
            return constant_environment()
        return EnvironmentProcess()
    kind = sec.get("kind", "iid_gaussian")
    std = float(sec.get("std", 1.0))
    if kind == "iid_gaussian":
        return EnvironmentProcess(dim=int(sec.get("dim", 1)), std=std)
    if kind == "moving_average":
        return moving_average(
            _need(sec, "coeffs", "environment"),
            truncation=sec.get("truncation"),
            std=std,
            emit_innovations=bool(sec.get("emit_innovations", isinstance(model, M.FsvModel))),
        )
    if kind == "constant":
        return constant_environment(sec.get("value", 0.0), int(sec.get("dim", 1)))
    raise InvalidConfiguration(f"unknown environment kind {kind!r}")


def build_tail(cfg: ExperimentConfig, env: Optional[EnvironmentProcess] = None) -> TailBound:
    sec = dict(cfg.section("environment").get("tail", {}))
    kind = sec.get("kind", "gaussian")
    if kind == "gaussian":
        std = float(sec.get("std", math.sqrt(env.marginal_variance()) if env is not None else 1.0))
        return gaussian_tail(sec.get("c1"), float(sec.get("c2", 1.0)), float(sec.get("b", 0.5)), std,
                             float(sec.get("prefactor", 2.0)))
    if kind == "moment":
        std = float(sec.get("std", math.sqrt(env.marginal_variance()) if env is not None else 1.0))
        return moment_tail(lambda q: gaussian_moment(q, std), float(_need(sec, "chi", "environment.tail")),
                           float(_need(sec, "r", "environment.tail")))
    if kind == "formula":
        g = Formula(str(_need(sec, "g", "environment.tail")), ("t",))
        ell = Formula(str(_need(sec, "ell", "environment.tail")), ("t",))
        return TailBound(lambda t: np.ceil(np.round(g(t), 9)).astype(np.int64), ell)
    raise InvalidConfiguration(f"unknown tail kind {kind!r}")


def build_rate_inputs(cfg: ExperimentConfig) -> RateInputs:
    model = build_model(cfg) if cfg.section("model") else None
    drift, minor = build_certificates(cfg, model)
    env = build_environment(cfg, model) if (cfg.section("environment") or model is not None) else None
    if isinstance(model, FiniteChainSpec) and "tail" not in cfg.section("environment"):
        # a constant environment stays at level 0
        tail = TailBound(lambda t: np.zeros(np.shape(t), dtype=np.int64), lambda t: np.zeros(np.shape(t)))
    else:
        tail = build_tail(cfg, env)
    return RateInputs(drift, minor, tail)


def state_function(text, name: str = "phi") -> Callable:
    """Formula in ``x`` applied elementwise to states."""
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        v = float(text)
        return lambda x: np.full(np.shape(x), v)
    if not isinstance(text, str):
        raise InvalidConfiguration(f"{name}: expected a formula in x")
    return Formula(text, ("x",))
