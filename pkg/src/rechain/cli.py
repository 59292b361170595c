"""Command-line experiment runner.

Every subcommand writes CSV artifacts and ``manifest.json`` into its output
directory.  Exit statuses: 0 all checks passed, 2 an assertion failed, 3 a
theorem hypothesis is unmet, 4 invalid configuration.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import math
import platform
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import config as C
from .certificates import CertificateClampWarning, check_drift, check_minorization
from .coupling import coupling_curve, default_anchor, run_coupled_trials
from .envtail import sample_env_paths, validate_tail
from .errors import (
    CertificateViolation,
    HypothesisFailure,
    InvalidConfiguration,
    InvalidInput,
    RechainError,
)
from .mixing import estimate_gamma_by_restart, lln_experiment
from .oracle import ContractionLemma, FiniteChainSpec, random_spec, verify_contraction_lemma
from .rates import (
    BoundKind,
    RateStatus,
    TruncationPolicy,
    lln_hypothesis_check,
    rate_pi,
    rate_table,
    theorem_bound,
)
from .streams import substream

EXIT_OK = 0
EXIT_ASSERTION = 2
EXIT_HYPOTHESIS = 3
EXIT_CONFIG = 4

SUBCOMMANDS = ("verify", "rates", "tail-check", "couple", "oracle", "mixing", "lln", "report")


# ---------------------------------------------------------------------------
# plumbing


class _Stage:
    """Tracks the module and operation in progress for error messages."""

    where = ("cli", "run")

    @classmethod
    @contextlib.contextmanager
    def at(cls, module: str, operation: str):
        # left in place on error so the handler can name the failing stage
        prev = cls.where
        cls.where = (module, operation)
        yield
        cls.where = prev


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    if v is None:
        return ""
    return str(v)


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


@dataclass
class Outcome:
    status: int = EXIT_OK
    tables: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def fail(self, code: int):
        self.status = max(self.status, code)


def _versions():
    return {"rechain": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _finish(out_dir: Path, sub: str, cfg, outcome: Outcome, started: float) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, (header, rows) in outcome.tables.items():
        write_csv(out_dir / name, header, rows)
    manifest = {
        "subcommand": sub,
        "config_sha256": cfg.sha256,
        "seed": cfg.seed,
        "versions": _versions(),
        "wall_time_s": round(time.time() - started, 3),
        "exit_status": outcome.status,
        "artifacts": sorted(outcome.tables),
        "notes": list(dict.fromkeys(outcome.notes)),
        "summary": outcome.summary,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=fmt) + "\n")
    for note in dict.fromkeys(outcome.notes):
        print(f"NOTE: {note}", file=sys.stderr)
    return outcome.status


def _grid(sec, key, default):
    v = sec.get(key, default)
    return [int(x) for x in (v if isinstance(v, list) else [v])]


# ---------------------------------------------------------------------------
# subcommands


def cmd_verify(cfg) -> Outcome:
    out = Outcome()
    sec = cfg.section("verify")
    with _Stage.at("models", "derive_certificates"):
        model = C.build_model(cfg)
        setup = C.build_setup(cfg, model)
        env = C.build_environment(cfg, model)
    finite = isinstance(model, FiniteChainSpec)
    n_probes = int(sec.get("probes", 200))
    rng = substream(cfg.seed, "verify", "probes")
    ys = sample_env_paths(env, 1, n_probes, rng)[0]
    lv = setup.levels(ys)
    if finite:
        xs = rng.integers(0, model.size, n_probes).astype(float)
    else:
        R = np.asarray(setup.radius(lv), dtype=float)
        xs = rng.uniform(-2.0, 2.0, n_probes) * R
    with _Stage.at("certificates", "check_drift"):
        rep = check_drift(setup.kernel, setup.drift, list(zip(ys, xs)), int(sec.get("mc_samples", 10_000)),
                          rng=substream(cfg.seed, "verify", "mc"))
    d = ys.shape[1]
    out.tables["drift.csv"] = (
        ["probe", "level"] + [f"y{i + 1}" for i in range(d)] + ["x", "margin", "stderr", "violation"],
        [[i, lv[i], *ys[i], xs[i], rep.margins[i], rep.stderr[i], rep.violations[i]] for i in range(n_probes)],
    )
    rows = []
    all_ok = rep.passed
    with _Stage.at("certificates", "check_minorization"):
        for n in _grid(sec, "levels", [1, 2, 3]):
            y = np.zeros(d)
            y[0] = n
            R = float(setup.radius(n))
            if finite:
                states = np.arange(model.size, dtype=float)
                x_grid = states[model.V <= R]
                r_grid = states
            else:
                x_grid = np.linspace(-R, R, int(sec.get("x_points", 21)))
                r_grid = np.linspace(-1.5 * R, 1.5 * R, int(sec.get("r_points", 61)))
            if x_grid.size == 0:
                out.notes.append(f"level {n}: small set is empty")
                continue
            m = check_minorization(setup.kernel, setup.drift, setup.minor, y, x_grid, r_grid)
            rows.append([n, m.alpha, m.radius, m.empirical_alpha, m.worst_x, m.deficit, m.passed])
            all_ok &= m.passed
    out.tables["minorization.csv"] = (
        ["level", "alpha", "radius", "empirical_alpha", "worst_x", "deficit", "pass"], rows)
    out.summary = {"drift_passed": rep.passed, "worst_drift_margin": rep.worst_margin,
                   "minorization_passed": all(r[-1] for r in rows)}
    if not all_ok:
        out.fail(EXIT_ASSERTION)
    return out


def cmd_rates(cfg) -> Outcome:
    out = Outcome()
    sec = cfg.section("rates")
    with _Stage.at("rates", "build_inputs"):
        inputs = C.build_rate_inputs(cfg)
    policy = TruncationPolicy(term_tol=float(sec.get("term_tol", 1e-14)),
                              max_terms=int(float(sec.get("max_terms", 5e7))))
    ts = sorted(set(_grid(sec, "t", [0, 1, 10, 100, 1000])))
    cols = {}
    flags = {t: [] for t in ts}
    with _Stage.at("rates", "rate_table"):
        for name in ("r1", "r2", "r3", "r4"):
            reps = rate_table(inputs, name, ts, policy)
            cols[name] = []
            for r in reps:
                cols[name].append(math.inf if r.divergence_flag else r.value)
                if r.status not in (RateStatus.CONVERGED, RateStatus.EXACT):
                    flags[r.t].append(f"{name}:{r.status.value}")
    with _Stage.at("rates", "rate_pi"):
        cols["pi"] = []
        for t in ts:
            p = rate_pi(inputs, t)
            cols["pi"].append(p.value)
            if p.note:
                flags[t].append("pi:boundary")
    with _Stage.at("rates", "theorem_bound"):
        for kind, key, label in ((BoundKind.WEIGHTED, "t1_bound", "T1"), (BoundKind.TOTAL_VARIATION, "t2_bound", "T2")):
            try:
                cols[key] = [r.value for r in theorem_bound(inputs, kind, ts, policy)]
            except HypothesisFailure as exc:
                cols[key] = [math.nan] * len(ts)
                for t in ts:
                    flags[t].append(f"{label}:hypothesis-failure")
                out.notes.append(f"{label} hypotheses unmet: {exc}")
                out.fail(EXIT_HYPOTHESIS)
    out.notes.append("theorem bounds are raw rate sums; the multiplicative constant is unknown and not estimated")
    with _Stage.at("rates", "lln_hypothesis_check"):
        lln_t = _grid(sec, "lln_t", [10, 100, 1000, 10_000, 100_000, 1_000_000])
        delta = float(sec.get("delta", 0.5))
        for bounded, label in ((False, "unbounded functionals"), (True, "bounded functionals")):
            h = lln_hypothesis_check(inputs, delta, lln_t, bounded)
            out.summary[f"lln_{'bounded' if bounded else 'unbounded'}_trend"] = h.trend.value
            if not h.satisfied:
                out.notes.append(f"hypothesis failure ({label}): ergodic-average hypothesis sequence is "
                                 f"{h.trend.value} (log-log slope {h.slope:.4f}), not decreasing to 0")
            if h.note:
                out.notes.append(h.note)
    pi_over_t = [p / t if t > 0 else None for p, t in zip(cols["pi"], ts)]
    header = ["t", "r1", "r2", "r3", "r4", "pi", "pi_over_t", "t1_bound", "t2_bound", "flags"]
    rows = [[t, cols["r1"][i], cols["r2"][i], cols["r3"][i], cols["r4"][i], cols["pi"][i], pi_over_t[i],
             cols["t1_bound"][i], cols["t2_bound"][i], ";".join(flags[t])] for i, t in enumerate(ts)]
    out.tables["rates.csv"] = (header, rows)
    out.summary.update({"t": ts, "r3": cols["r3"], "r4": cols["r4"], "pi_over_t": pi_over_t})
    return out


def cmd_tail_check(cfg) -> Outcome:
    out = Outcome()
    sec = cfg.section("tail_check")
    with _Stage.at("envtail", "validate_tail"):
        model = C.build_model(cfg) if cfg.section("model") else None
        env = C.build_environment(cfg, model)
        tail = C.build_tail(cfg, env)
        res = validate_tail(env, tail, _grid(sec, "t", [1, 2, 5, 10, 20]), int(sec.get("trials", 100_000)),
                            seed=cfg.seed, level=float(sec.get("level", 0.99)))
    out.tables["tail_check.csv"] = (
        ["t", "g_t", "ell_t", "emp_freq", "emp_upper99", "pass"],
        [[r.t, r.g, r.ell, float(r.frequency), r.upper99, r.passed] for r in res.rows],
    )
    out.summary = {"passed": res.passed, "trials": res.trials}
    if not res.passed:
        out.fail(EXIT_ASSERTION)
    return out


def cmd_couple(cfg) -> Outcome:
    out = Outcome()
    sec = cfg.section("couple")
    with _Stage.at("models", "derive_certificates"):
        model = C.build_model(cfg)
        setup = C.build_setup(cfg, model)
        env = C.build_environment(cfg, model)
    horizon = int(sec.get("horizon", 30))
    trials = int(sec.get("trials", 2000))
    x0 = float(sec.get("x0", getattr(model, "x0", 0.0)))
    if "anchor" in sec:
        anchor = float(sec["anchor"])
    else:
        if isinstance(model, FiniteChainSpec):
            cands = np.arange(model.size, dtype=float)
        else:
            R0 = float(setup.radius(0))
            cands = np.linspace(-R0, R0, 9)
        cands = cands[cands != x0] if np.any(cands != x0) else cands
        anchor = default_anchor(cands, setup.drift.values)
    t = [tt for tt in _grid(sec, "t", list(range(horizon + 1))) if tt <= horizon]
    with _Stage.at("coupling", "run_coupled_trials"):
        try:
            batch = run_coupled_trials(setup, env, x0, anchor, horizon, trials, cfg.seed)
        except (RuntimeError, CertificateViolation) as exc:
            out.notes.append(f"coupling assertion failed: {exc}")
            out.fail(EXIT_ASSERTION)
            return out
        curve = coupling_curve(batch, t)
    out.tables["couple.csv"] = (
        ["t", "frac_uncoupled", "ci_lo", "ci_hi", "mean_returns"],
        [[int(a), float(f), float(lo), float(hi), float(mr)]
         for a, f, lo, hi, mr in zip(curve.t, curve.frequency, curve.ci_lo, curve.ci_hi, curve.mean_returns)],
    )
    if np.any(np.diff(curve.uncoupled) > 0):
        out.notes.append("uncoupled count increased in t: coupled pairs separated")
        out.fail(EXIT_ASSERTION)
    out.summary = {"x0": x0, "anchor": anchor, "trials": trials, "horizon": horizon,
                   "final_frac_uncoupled": float(curve.frequency[-1]),
                   "final_ci": [float(curve.ci_lo[-1]), float(curve.ci_hi[-1])]}
    return out


def cmd_oracle(cfg, args) -> Outcome:
    out = Outcome()
    sec = cfg.section("oracle")
    states = int(args.states if args.states is not None else sec.get("states", 5))
    trials = int(args.trials if args.trials is not None else sec.get("trials", 1000))
    specs = int(args.specs if args.specs is not None else sec.get("specs", 100))
    lemma = ContractionLemma(args.lemma if args.lemma is not None else sec.get("lemma", "small-set"))
    rows = []
    with _Stage.at("oracle", "verify_contraction_lemma"):
        for i in range(specs):
            rng = substream(cfg.seed, "oracle", "spec", i)
            spec = random_spec(rng, k=states)
            rep = verify_contraction_lemma(spec, 0, trials, lemma, rng)
            rows.append([i, lemma.value, rep.beta, rep.factor, rep.worst_ratio, rep.pairs, rep.passed])
    out.tables["oracle.csv"] = (["spec", "lemma", "beta", "factor", "worst_ratio", "pairs", "pass"], rows)
    margin = max(r[4] - r[3] for r in rows)
    out.summary = {"specs": specs, "states": states, "worst_ratio_minus_factor": margin,
                   "passed": all(r[-1] for r in rows)}
    if not out.summary["passed"]:
        out.fail(EXIT_ASSERTION)
    return out


def cmd_mixing(cfg) -> Outcome:
    out = Outcome()
    sec = cfg.section("mixing")
    with _Stage.at("models", "derive_certificates"):
        model = C.build_model(cfg)
        setup = C.build_setup(cfg, model)
        env = C.build_environment(cfg, model)
    phi = C.state_function(sec.get("phi", "x"))
    tau = _grid(sec, "tau", [0, 1, 2, 4, 8, 16])
    with _Stage.at("mixing", "estimate_gamma_by_restart"):
        rep = estimate_gamma_by_restart(
            setup, env, phi, float(sec.get("r", 2.0)), _grid(sec, "m", [10]), tau, int(sec.get("trials", 1000)),
            cfg.seed, x0=float(sec.get("x0", getattr(model, "x0", 0.0))), anchor=float(sec.get("anchor", 0.0)),
            horizon=int(sec.get("horizon", max(tau))),
        )
    out.tables["mixing.csv"] = (["tau", "gamma_hat", "stderr"],
                                [[int(t), float(g), float(s)] for t, g, s in zip(rep.tau, rep.gamma, rep.gamma_stderr)])
    out.notes.append(rep.note)
    out.summary = {"M_r": rep.M_r, "Gamma_grid": rep.Gamma_grid, "Gamma_cap": rep.Gamma_cap,
                   "Gamma_geometric": rep.Gamma_geometric, "horizon": rep.horizon}
    if np.any(rep.gamma < 0):
        out.fail(EXIT_ASSERTION)
    return out


def cmd_lln(cfg) -> Outcome:
    out = Outcome()
    sec = cfg.section("lln")
    with _Stage.at("models", "derive_certificates"):
        model = C.build_model(cfg)
        setup = C.build_setup(cfg, model)
        env = C.build_environment(cfg, model)
    bounded = bool(sec.get("bounded", True))
    delta = float(sec.get("delta", 0.5))
    with _Stage.at("rates", "lln_hypothesis_check"):
        inputs = C.build_rate_inputs(cfg)
        hyp = lln_hypothesis_check(inputs, min(max(delta, 1e-9), 0.5), _grid(sec, "hypothesis_t",
                                   [10, 100, 1000, 10_000, 100_000]), bounded)
    target = model.certified() if isinstance(model, FiniteChainSpec) else model
    ref = sec.get("reference")
    if ref is None and isinstance(model, FiniteChainSpec) and sec.get("exact_reference", True) and "phi_states" in sec:
        from .oracle import stationary_distribution

        pi = stationary_distribution(model.matrix(min(model.kernels)))
        ref = float(np.dot(np.asarray(pi, dtype=float), np.asarray(sec["phi_states"], dtype=float)))
    phi = C.state_function(sec.get("phi", "x"))
    with _Stage.at("mixing", "lln_experiment"):
        rep = lln_experiment(
            target, setup, env, phi, delta, float(sec.get("p", 2.0)), _grid(sec, "N", [100, 1000, 10_000]),
            int(sec.get("trials", 200)), cfg.seed, x0=float(sec.get("x0", getattr(model, "x0", 0.0))),
            bounded=bounded, hypothesis=hyp, reference=ref,
            anchor=float(sec["anchor"]) if "anchor" in sec else None,
        )
    out.tables["lln.csv"] = (["N", "lp_error", "ref", "ref_err"],
                             [[int(n), float(e), rep.ref, rep.ref_err] for n, e in zip(rep.N, rep.lp_error)])
    if rep.note:
        out.notes.append(rep.note)
    if hyp.note:
        out.notes.append(hyp.note)
    out.summary = {"decreasing": rep.decreasing, "shape_slope": rep.shape_slope, "covered": rep.covered,
                   "burn_in": rep.burn_in}
    return out


# ---------------------------------------------------------------------------
# report


def build_report(run_dir: Path):
    """Text lines and CSV rows summarizing every manifest under ``run_dir``."""
    manifests = sorted(run_dir.rglob("manifest.json"))
    lines, rows, gaps = [], [], []
    for mpath in manifests:
        try:
            man = json.loads(mpath.read_text())
        except (OSError, json.JSONDecodeError):
            gaps.append(f"{mpath.parent}: unreadable manifest")
            continue
        sub = man.get("subcommand", "?")
        rel = mpath.parent.relative_to(run_dir) if mpath.parent != run_dir else Path(".")
        lines.append(f"[{rel}] {sub}  seed={man.get('seed')}  exit={man.get('exit_status')}  "
                     f"config={str(man.get('config_sha256', ''))[:12]}")
        missing = [a for a in man.get("artifacts", []) if not (mpath.parent / a).is_file()]
        for a in missing:
            gaps.append(f"{rel}: missing artifact {a}")
        summary = dict(man.get("summary", {}))
        if sub == "couple" and (mpath.parent / "couple.csv").is_file():
            with open(mpath.parent / "couple.csv", newline="") as fh:
                data = list(csv.DictReader(fh))
            t = np.array([float(r["t"]) for r in data])
            f = np.array([float(r["frac_uncoupled"]) for r in data])
            keep = f > 0
            slope = float(np.polyfit(t[keep], np.log(f[keep]), 1)[0]) if keep.sum() >= 2 else math.nan
            summary["log_decay_slope"] = slope
        if sub == "lln":
            summary["trend"] = "decreasing" if summary.get("decreasing") else "not decreasing"
        for k in sorted(summary):
            lines.append(f"    {k}: {fmt(summary[k]) if not isinstance(summary[k], list) else summary[k]}")
            rows.append([str(rel), sub, k, fmt(summary[k]) if not isinstance(summary[k], list) else
                         " ".join(fmt(v) for v in summary[k])])
        for note in man.get("notes", []):
            lines.append(f"    note: {note}")
    if gaps:
        lines.append("gaps:")
        lines.extend(f"    {g}" for g in gaps)
    return lines, rows, manifests


def cmd_report(run_dir: Path) -> int:
    if not run_dir.is_dir():
        print(f"error in cli.report: {run_dir} is not a directory", file=sys.stderr)
        return EXIT_CONFIG
    lines, rows, manifests = build_report(run_dir)
    if not manifests:
        print(f"warning: no run manifests under {run_dir}; empty report", file=sys.stderr)
    text = "\n".join(lines) + ("\n" if lines else "")
    (run_dir / "report.txt").write_text(text)
    write_csv(run_dir / "report.csv", ["run", "subcommand", "key", "value"], rows)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rechain", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"rechain {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        if config_required:
            sp.add_argument("config", help="TOML experiment config")
        else:
            sp.add_argument("config", nargs="?", help="TOML experiment config (optional)")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--seed", type=int, help="root seed (overrides the config)")

    for name in ("verify", "rates", "tail-check", "mixing", "lln"):
        common(sub.add_parser(name))
    sp = sub.add_parser("couple")
    common(sp, config_required=False)
    sp.add_argument("--model", choices=C.NAMED_MODELS, help="built-in model id")
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--anchor", type=float)
    sp = sub.add_parser("oracle")
    sp.add_argument("action", choices=["verify-contraction"])
    common(sp, config_required=False)
    sp.add_argument("--states", type=int)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--specs", type=int)
    sp.add_argument("--lemma", choices=[m.value for m in ContractionLemma])
    sp = sub.add_parser("report")
    sp.add_argument("run_dir")
    return p


def _load(args):
    path = getattr(args, "config", None)
    if path:
        data = C.load_config(path).data
        base = Path(path)
    else:
        data, base = {}, None
    data = json.loads(json.dumps(data))
    run = data.setdefault("run", {})
    if args.seed is not None:
        run["seed"] = args.seed
    if args.command == "couple":
        if args.model:
            data["model"] = {"id": args.model}
        couple = data.setdefault("couple", {})
        for key in ("horizon", "trials", "anchor"):
            if getattr(args, key) is not None:
                couple[key] = getattr(args, key)
        if "model" not in data:
            raise InvalidConfiguration("couple needs --model or a config with a [model] section")
    cfg = C.config_from_dict(data, base)
    out = Path(args.out) if args.out else cfg.output_dir or Path("runs") / f"{args.command}-seed{cfg.seed}"
    return cfg, out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "report":
        return cmd_report(Path(args.run_dir))
    started = time.time()
    warnings.simplefilter("ignore", CertificateClampWarning)
    try:
        with _Stage.at("cli", "load_config"):
            cfg, out_dir = _load(args)
        handlers = {
            "verify": cmd_verify, "rates": cmd_rates, "tail-check": cmd_tail_check, "couple": cmd_couple,
            "mixing": cmd_mixing, "lln": cmd_lln,
        }
        outcome = cmd_oracle(cfg, args) if args.command == "oracle" else handlers[args.command](cfg)
    except (InvalidConfiguration, InvalidInput) as exc:
        module, op = _Stage.where
        print(f"error in {module}.{op}: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HypothesisFailure as exc:
        module, op = _Stage.where
        print(f"error in {module}.{op}: hypothesis failure: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except RechainError as exc:
        module, op = _Stage.where
        print(f"error in {module}.{op}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ASSERTION
    return _finish(out_dir, args.command, cfg, outcome, started)


if __name__ == "__main__":
    sys.exit(main())
