import json
import math

import pandas as pd
import pytest

from run_wcsk import main

VERIFY = """
[run]
command = "verify"
seed = 5

[chart]
families = ["sphere"]

[[weights]]
name = "classical"
v = "1"
w = "1"

[plan]
potentials = 1
points = 6
identities = ["collapse", "scal_v_forms"]
audits = ["trace_inequalities"]
"""

SOLVE_ROUND = """
[run]
command = "solve"

[solver]
N = 17
roster = ["round"]
"""

AUDIT_ROUND = """
[run]
command = "audit"

[solver]
N = 17
roster = ["round"]

[audit]
entropy_members = 3
grid_counts = [9, 17]
"""


def _run(tmp_path, text: str, command: str, name: str = "run.toml"):
    config = tmp_path / name
    config.write_text(text)
    out = tmp_path / "out"
    status = main([command, "--config", str(config), "--out", str(out)])
    return status, out


def _summary(out):
    return json.loads((out / "failure_summary.json").read_text())


def test_verify_classical_weights(tmp_path):
    status, out = _run(tmp_path, VERIFY, "verify")
    assert status == 0
    report = json.loads((out / "audit_report.json").read_text())
    assert report["passed"] and report["seed"] == 5
    assert [e["name"] for e in report["charts"][0]["entries"]] == ["collapse", "scal_v_forms", "trace_inequalities"]
    assert _summary(out) == {"command": "verify", "status": 0, "failures": [], "message": ""}


def test_solve_round_sphere(tmp_path):
    status, out = _run(tmp_path, SOLVE_ROUND, "solve")
    assert status == 0
    report = json.loads((out / "solve_report.json").read_text())
    (solution,) = report["solutions"]
    assert solution["a"] == pytest.approx(8.0 * math.pi, abs=1e-6)
    assert solution["b"] == pytest.approx(0.0, abs=1e-6)
    frame = pd.read_csv(out / "solution_round.csv")
    assert list(frame.columns) == ["x", "theta", "phi", "F", "mu", "Scal_v", "w"]
    assert (frame["theta"] - (1.0 - frame["x"] ** 2)).abs().max() < 1e-8
    assert (frame["Scal_v"] - 8.0 * math.pi).abs().max() < 1e-6
    assert (out / "trace_round.csv").exists()


def test_rerun_is_byte_identical(tmp_path):
    _, out = _run(tmp_path, SOLVE_ROUND, "solve")
    first = (out / "solve_report.json").read_bytes()
    csv = (out / "solution_round.csv").read_bytes()
    _, out = _run(tmp_path, SOLVE_ROUND, "solve")
    assert (out / "solve_report.json").read_bytes() == first
    assert (out / "solution_round.csv").read_bytes() == csv


def test_nonpositive_weight_exits_2(tmp_path, capsys):
    text = VERIFY.replace('v = "1"', 'v = "x0"')
    status, out = _run(tmp_path, text, "verify")
    assert status == 2
    assert "nonpositive weight" in capsys.readouterr().out
    summary = _summary(out)
    assert summary["status"] == 2 and "nonpositive weight" in summary["message"]


def test_missing_config_exits_2(tmp_path):
    out = tmp_path / "out"
    assert main(["solve", "--config", str(tmp_path / "nope.toml"), "--out", str(out)]) == 2
    assert _summary(out)["status"] == 2


def test_verify_requires_seed(tmp_path):
    status, _ = _run(tmp_path, SOLVE_ROUND, "verify")
    assert status == 2


def test_failed_solve_exits_1(tmp_path):
    text = SOLVE_ROUND.replace('roster = ["round"]', "") + (
        '\n[[weights]]\nname = "quadratic"\nv = "1"\nw = "(mul 200 (sub (mul 3 x0 x0) 1))"\n'
    )
    status, out = _run(tmp_path, text, "solve")
    assert status == 1
    assert _summary(out)["failures"] == ["quadratic"]
    report = json.loads((out / "solve_report.json").read_text())
    assert report["solutions"][0]["error"].startswith("profile for 'quadratic' is nonpositive")


def test_audit_round_sphere(tmp_path):
    status, out = _run(tmp_path, AUDIT_ROUND, "audit")
    assert status == 0
    report = json.loads((out / "audit_report.json").read_text())
    (estimate,) = report["estimates"]
    assert estimate["weighted_entropy"] == pytest.approx(0.0, abs=1e-10)
    assert all(estimate["checks"].values())
    assert estimate["checks"]["grid_convergence"]
    assert estimate["checks"]["oracle_equivalence"]
    assert [row["N"] for row in estimate["grid_convergence"]] == [9, 17]
    assert len(estimate["entropy_family"]) == 3
    assert (out / "entropy_family_round.csv").exists()
