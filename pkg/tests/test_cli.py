import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from affinectl.cli import main
from affinectl.csvio import read_csv, write_csv

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def write_cfg(tmp_path, text, name="s.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_sir_controllability(capsys, tmp_path):
    code, out, _ = run(capsys, "controllability", "--config",
                       SCENARIOS / "sir_controllability.cfg", "--out", tmp_path)
    assert code == 0
    assert out.splitlines()[0] == "rank=1 required=2 controllable=false"


def test_realize_round_trip(capsys, tmp_path):
    code, out, _ = run(capsys, "realize", "--config", SCENARIOS / "sir_realize.cfg",
                       "--out", tmp_path)
    assert code == 0 and out.startswith("realize system=")
    header, data, _ = read_csv(tmp_path / "realize.csv")
    assert header[:4] == ["t", "x1", "x2", "x3"] and "residual" in header
    assert np.max(np.abs(data[:, 1:4].sum(axis=1) - 1.0)) < 1e-10
    dev = float(out.split("max_deviation=")[1].split()[0])
    assert dev < 1e-6


def test_optimal(capsys, tmp_path):
    code, out, _ = run(capsys, "optimal", "--config", SCENARIOS / "free_particle_optimal.cfg",
                       "--out", tmp_path)
    assert code == 0 and "converged=true" in out
    header, _, _ = read_csv(tmp_path / "optimal.csv")
    assert header == ["t", "x1", "x2", "lam1", "lam2", "u1"]


def test_rds(capsys, tmp_path):
    code, out, _ = run(capsys, "rds", "--config", SCENARIOS / "schloegl_rds.cfg", "--out", tmp_path)
    assert code == 0
    assert float(out.split("position_error_dx=")[1].split()[0]) <= 2.0
    _, _, meta = read_csv(tmp_path / "schloegl.csv")
    assert set(meta) == {"L", "N", "dt"}


def test_missing_epsilon(capsys, tmp_path):
    text = (SCENARIOS / "free_particle_optimal.cfg").read_text()
    text = "\n".join(l for l in text.splitlines() if not l.startswith("epsilon"))
    code, _, err = run(capsys, "optimal", "--config", write_cfg(tmp_path, text))
    assert code == 3 and "problem.epsilon" in err


def test_expression_error_is_config_error(capsys, tmp_path):
    text = (SCENARIOS / "fhn_realize.cfg").read_text().replace("sin(20*t)", "sin(20*t")
    code, _, err = run(capsys, "realize", "--config", write_cfg(tmp_path, text), "--out", tmp_path)
    assert code == 3 and "offset" in err


def test_division_by_zero_is_numeric(capsys, tmp_path):
    text = (SCENARIOS / "fhn_realize.cfg").read_text().replace("sin(20*t)", "1/t*sin(20*t)")
    code, _, err = run(capsys, "realize", "--config", write_cfg(tmp_path, text), "--out", tmp_path)
    assert code == 2 and "division by zero" in err


@pytest.mark.parametrize("argv", [[], ["simulate"], ["optimal"], ["realize", "--seed", "-1",
                                                                   "--config", "x.cfg"]])
def test_usage_errors(capsys, argv):
    code, _, _ = run(capsys, *argv)
    assert code == 1


def test_compare(capsys, tmp_path):
    t = np.linspace(0, 1, 11)
    write_csv(tmp_path / "a.csv", ["t", "x"], np.column_stack([t, t]))
    write_csv(tmp_path / "b.csv", ["t", "x"], np.column_stack([t, t + 0.1]))
    write_csv(tmp_path / "c.csv", ["t", "y"], np.column_stack([t, t]))
    code, out, _ = run(capsys, "compare", tmp_path / "a.csv", tmp_path / "a.csv", "--tol", 0)
    assert code == 0 and out.startswith("sup=0 ")
    code, _, _ = run(capsys, "compare", tmp_path / "a.csv", tmp_path / "b.csv", "--tol", 0.05)
    assert code == 1
    code, out, _ = run(capsys, "compare", tmp_path / "a.csv", tmp_path / "b.csv", "--norm", "l2",
                       "--window", "0,0.5")
    assert code == 0 and out.startswith("l2=")
    code, _, _ = run(capsys, "compare", tmp_path / "a.csv", tmp_path / "c.csv")
    assert code == 1


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "affinectl", "controllability", "--config",
                           str(SCENARIOS / "sir_controllability.cfg"), "--out", str(tmp_path)],
                          capture_output=True, text=True, env={**os.environ})
    assert proc.returncode == 0 and "controllable=false" in proc.stdout


@pytest.mark.slow
def test_analytic_ellipse(capsys, tmp_path):
    code, out, _ = run(capsys, "analytic", "--config", SCENARIOS / "fhn_ellipse_analytic.cfg",
                       "--out", tmp_path)
    assert code == 0 and "kick_left=" in out and "sup_vs_composite=" in out
    assert (tmp_path / "ellipse.csv").exists() and (tmp_path / "ellipse_numerical.csv").exists()
