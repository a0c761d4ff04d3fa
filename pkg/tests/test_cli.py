import json
import os
import subprocess
import sys

import pytest

from pdmpctl.cli import main

SMALL_A = '[model]\nbenchmark = "A"\n[grid]\nlower = 0.05\nupper = 0.95\ncount = 19\n'


@pytest.fixture
def small_a(tmp_path):
    p = tmp_path / "a.toml"
    p.write_text(SMALL_A)
    return p


def _json(path):
    with open(path) as fh:
        return json.load(fh)


def test_check_passes_and_broken_witness_fails(tmp_path):
    good = tmp_path / "good.toml"
    good.write_text('[model]\nbenchmark = "A"\n')
    assert main(["check", str(good), "--out", str(tmp_path / "g"), "--ergodicity"]) == 0
    rep = _json(tmp_path / "g" / "check.json")
    assert rep["passed"] and rep["ergodicity"]["kappa"] < 1
    bad = tmp_path / "bad.toml"
    bad.write_text('[model]\nbenchmark = "A"\n[witness]\nM = 0.5\n')
    assert main(["check", str(bad), "--out", str(tmp_path / "b")]) == 1
    rows = (tmp_path / "b" / "violations.csv").read_text().splitlines()
    assert rows[0] == "group,inequality,x,action,slack" and len(rows) > 1


def test_usage_errors(tmp_path, small_a):
    assert main(["check", str(tmp_path / "missing.toml")]) == 2
    broken = tmp_path / "broken.toml"
    broken.write_text("[model\n")
    assert main(["solve", str(broken)]) == 2
    assert main(["simulate", str(small_a), "--out", str(tmp_path), "--policy", "builtin:9"]) == 2
    assert main(["simulate", str(small_a), "--out", str(tmp_path), "--policy", "nofile.json"]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["solve", str(small_a), "--mode", "bogus"])
    assert exc.value.code == 2


def test_solve_then_simulate_round_trip(tmp_path, small_a):
    out = tmp_path / "run"
    assert main(["solve", str(small_a), "--out", str(out)]) == 0
    sol = _json(out / "solution.json")
    assert sol["mode"] == "average" and len(sol["rho_trace"]) == 12
    assert len(sol["value"]) == len(sol["selector"]["interior"]) == 19
    for name in ("value.csv", "selector.csv", "rho_trace.csv"):
        assert (out / name).exists()
    assert main(["simulate", str(small_a), "--out", str(out), "--policy", str(out / "solution.json"),
                 "--horizon", "200", "--reps", "40", "--dump", "2"]) == 0
    est = _json(out / "estimate.json")
    assert abs(est["mean"] - sol["rho"]) <= 3 * est["std_error"] + 0.02 * sol["rho"]
    assert "z_score" in est
    assert (out / "trajectories.csv").read_text().startswith(
        "trajectory,T_i,boundary_flag,post_x,cumulative_cost")


def test_archive_for_other_grid_is_rejected(tmp_path, small_a):
    out = tmp_path / "run"
    assert main(["solve", str(small_a), "--out", str(out), "--mode", "discounted"]) == 0
    full = tmp_path / "full.toml"
    full.write_text('[model]\nbenchmark = "A"\n')
    assert main(["simulate", str(full), "--out", str(out),
                 "--policy", str(out / "solution.json")]) == 2


def test_convergence_failure_exit_code(tmp_path, small_a):
    out = tmp_path / "run"
    cfg = tmp_path / "tight.toml"
    cfg.write_text(SMALL_A + "[numerics]\nacoi_tol = -1.0\nschedule_terms = 2\n")
    code = main(["solve", str(cfg), "--out", str(out)])
    assert code == 1
    assert "error" in _json(out / "solution.json")


def test_seed_override_and_byte_identical_outputs(tmp_path, small_a, monkeypatch):
    args = ["simulate", str(small_a), "--horizon", "50", "--reps", "10"]
    assert main(args + ["--out", str(tmp_path / "r1"), "--seed", "4"]) == 0
    assert main(args + ["--out", str(tmp_path / "r2"), "--seed", "4"]) == 0
    a = (tmp_path / "r1" / "estimate.json").read_bytes()
    assert a == (tmp_path / "r2" / "estimate.json").read_bytes()
    monkeypatch.setenv("PDMP_SEED", "4")
    assert main(args + ["--out", str(tmp_path / "r3"), "--seed", "99"]) == 0
    assert a == (tmp_path / "r3" / "estimate.json").read_bytes()
    monkeypatch.setenv("PDMP_SEED", "x")
    assert main(args + ["--out", str(tmp_path / "r4")]) == 2


def test_discounted_simulate(tmp_path, small_a):
    assert main(["simulate", str(small_a), "--out", str(tmp_path), "--alpha", "0.5",
                 "--reps", "100", "--policy", "builtin:1"]) == 0
    est = _json(tmp_path / "estimate.json")
    assert est["kind"] == "discounted" and est["mean"] > 0


def test_oracle_rejects_modified_model(tmp_path, small_a):
    assert main(["oracle", str(small_a), "--out", str(tmp_path)]) == 2


def test_oracle_budget_failure(tmp_path):
    cfg = tmp_path / "a.toml"
    cfg.write_text('[model]\nbenchmark = "A-zero-cost"\n')
    assert main(["oracle", str(cfg), "--out", str(tmp_path), "--budget", "10", "--jobs", "1"]) == 1
    assert main(["oracle", str(cfg), "--out", str(tmp_path), "--reps", "2", "--horizon", "5",
                 "--jobs", "1"]) == 0
    assert _json(tmp_path / "oracle.json")["value"] == 0.0


def test_console_script_entry_point(tmp_path):
    cfg = tmp_path / "b.toml"
    cfg.write_text('[model]\nbenchmark = "B"\n')
    r = subprocess.run([sys.executable, "-m", "pdmpctl.cli", "check", str(cfg), "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "check passed" in r.stdout
