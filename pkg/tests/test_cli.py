import csv
import json
from pathlib import Path

import numpy as np
import pytest

from rechain.cli import EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_OK, fmt, main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def manifest(path):
    return json.loads((path / "manifest.json").read_text())


def test_fmt_is_round_trip_exact():
    x = 0.1 + 0.2
    assert float(fmt(x)) == x
    assert fmt(True) == "true" and fmt(np.int64(3)) == "3" and fmt(float("inf")) == "inf" and fmt(None) == ""


def test_verify_desk(tmp_path):
    assert main(["verify", str(CONFIGS / "desk.toml"), "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "drift.csv").exists() and (tmp_path / "minorization.csv").exists()
    m = manifest(tmp_path)
    assert m["exit_status"] == 0 and m["seed"] == 3 and m["subcommand"] == "verify"
    assert len(m["config_sha256"]) == 64
    assert all(r["pass"] == "true" for r in read_csv(tmp_path / "minorization.csv"))


def test_rates_slow_contraction(tmp_path, capsys):
    assert main(["rates", str(CONFIGS / "rates_slow_contraction.toml"), "--out", str(tmp_path)]) == EXIT_OK
    rows = read_csv(tmp_path / "rates.csv")
    assert all(np.isfinite(float(r["r3"])) for r in rows)
    plateau = [float(r["pi_over_t"]) for r in rows if int(r["t"]) >= 10_000]
    assert all(0.1 < v < 0.25 for v in plateau)
    assert np.all(np.diff(plateau) > 0)
    notes = manifest(tmp_path)["notes"]
    assert any("hypothesis failure" in n for n in notes)
    assert "NOTE" in capsys.readouterr().err


def test_rates_divergent_exit_three(tmp_path):
    cfg = tmp_path / "div.toml"
    cfg.write_text(
        '[run]\nseed = 1\n[certificates]\nmode = "formula"\nlam = "1/3"\nK = 1\n'
        'alpha = "min(1/3, sqrt(log(max(n, 3)))/max(n, 3))"\n'
        '[environment.tail]\nkind = "formula"\ng = "t"\nell = "0"\n[rates]\nt = [0, 10]\n'
    )
    assert main(["rates", str(cfg), "--out", str(tmp_path / "out")]) == EXIT_HYPOTHESIS


def test_missing_seed_exit_four(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text('[model]\nid = "desk"\n')
    assert main(["verify", str(cfg), "--out", str(tmp_path / "out")]) == EXIT_CONFIG


def test_unknown_model_exit_four(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text('[run]\nseed = 1\n[model]\nkind = "nonsense"\n')
    assert main(["verify", str(cfg), "--out", str(tmp_path / "out")]) == EXIT_CONFIG


def test_report_on_empty_directory(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == EXIT_OK
    assert "warning" in capsys.readouterr().err
    assert (tmp_path / "report.txt").read_text() == ""


def _couple(out, seed):
    return main(["couple", "--model", "two-state", "--horizon", "30", "--trials", "4000", "--seed", str(seed),
                 "--out", str(out)])


def test_couple_report_slope_from_csv(tmp_path):
    run = tmp_path / "c1"
    assert _couple(run, 1) == EXIT_OK
    rows = read_csv(run / "couple.csv")
    t = np.array([int(r["t"]) for r in rows])
    f = np.array([float(r["frac_uncoupled"]) for r in rows])
    keep = f > 0
    slope = np.polyfit(t[keep], np.log(f[keep]), 1)[0]
    assert main(["report", str(tmp_path)]) == EXIT_OK
    report = read_csv(tmp_path / "report.csv")
    got = [float(r["value"]) for r in report if r["key"] == "log_decay_slope"]
    assert got and got[0] == pytest.approx(slope, rel=1e-9)


def test_couple_seeds_agree_within_intervals(tmp_path):
    assert _couple(tmp_path / "a", 1) == EXIT_OK
    assert _couple(tmp_path / "b", 2) == EXIT_OK
    ra, rb = read_csv(tmp_path / "a" / "couple.csv"), read_csv(tmp_path / "b" / "couple.csv")
    for a, b in zip(ra, rb):
        assert float(a["ci_lo"]) <= float(b["ci_hi"]) and float(b["ci_lo"]) <= float(a["ci_hi"])


def test_oracle_subcommand(tmp_path):
    args = ["oracle", "verify-contraction", "--states", "5", "--trials", "200", "--specs", "10", "--seed", "1",
            "--out", str(tmp_path)]
    assert main(args) == EXIT_OK
    rows = read_csv(tmp_path / "oracle.csv")
    assert len(rows) == 10 and all(r["pass"] == "true" for r in rows)


@pytest.mark.parametrize("args,files", [
    (["verify", "two_state.toml"], ["drift.csv", "minorization.csv"]),
    (["tail-check", "log_profile.toml"], ["tail_check.csv"]),
    (["couple", "desk.toml"], ["couple.csv"]),
    (["mixing", "desk.toml"], ["mixing.csv"]),
    (["lln", "two_state.toml"], ["lln.csv"]),
])
def test_reruns_are_byte_identical(tmp_path, args, files):
    cmd, cfg = args
    for run in ("first", "second"):
        assert main([cmd, str(CONFIGS / cfg), "--out", str(tmp_path / run)]) == EXIT_OK
    for name in files:
        assert (tmp_path / "first" / name).read_bytes() == (tmp_path / "second" / name).read_bytes()


def test_seed_override_changes_output(tmp_path):
    for seed, run in ((1, "a"), (2, "b")):
        assert main(["couple", str(CONFIGS / "desk.toml"), "--seed", str(seed), "--out", str(tmp_path / run)]) == 0
    assert manifest(tmp_path / "a")["seed"] == 1
    assert manifest(tmp_path / "b")["seed"] == 2
