"""Command-line behavior: output text, written artifacts, exit codes."""

import json
import os
import re

import pytest

from bsbshoot.cli import run
from bsbshoot.problems_io import load_bundle, load_problem


def test_solve_dubins(tmp_path, capsys):
    assert run(["solve", "--problem", "dubins", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "tau1 = 1.5707963" in out
    assert "tau2 = 9.5707963" in out
    assert "T = 11.1415927" in out
    assert "certification: PASS" in out
    doc = load_bundle(str(tmp_path / "bundle.json"))
    assert doc["problem"]["name"] == "dubins"
    assert len(doc["records"]) == 1


def test_certify_margins_table(tmp_path, capsys):
    assert run(["certify", "--problem", "dubins", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "certification: PASS" in out
    assert re.search(r"margin_sglc\s+1\b", out)
    assert re.search(r"controllability_rank\s+3\b", out)
    assert re.search(r"coercivity_qp\s+coercive", out)


def test_continue_ray(tmp_path, capsys):
    rc = run(["continue", "--problem", "dubins", "--out", str(tmp_path),
              "--r-ray", "1,0;0.05;10"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "11 records" in out
    rows = [line.split() for line in out.splitlines()
            if line.endswith(("PASS", "FAIL"))]
    assert len(rows) == 11
    assert all(row[-1] == "PASS" for row in rows)
    T = [float(row[4]) for row in rows]
    assert all(b < a for a, b in zip(T, T[1:]))
    doc = load_bundle(str(tmp_path / "bundle.json"))
    assert len(doc["records"]) == 11


def test_sensitivity_output(tmp_path, capsys):
    assert run(["sensitivity", "--problem", "dubins",
                "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    omega1 = next(line for line in out.splitlines()
                  if line.strip().startswith("omega1"))
    assert float(omega1.split()[1]) == pytest.approx(-1.0, abs=1e-8)
    T_row = next(line for line in out.splitlines()
                 if line.strip().startswith("T "))
    assert float(T_row.split()[1]) == pytest.approx(-11.1415926, rel=1e-6)


def test_scan_uniqueness_deterministic(tmp_path, capsys):
    args = ["scan-uniqueness", "--problem", "dubins", "--out", str(tmp_path),
            "--n-probe", "8", "--seed", "11"]
    assert run(args) == 0
    first = capsys.readouterr().out
    assert "distinct zeros found: 1" in first
    assert run(args) == 0
    assert capsys.readouterr().out == first


def test_export_writes_csv_and_figures(tmp_path, capsys):
    assert run(["export", "--problem", "dodgem-stub", "--out", str(tmp_path),
                "--samples", "30"]) == 0
    out = capsys.readouterr().out
    assert "switching.png" in out and "trajectory.png" in out
    names = sorted(os.listdir(tmp_path))
    assert names == ["bundle.json", "switching.png", "trajectory.csv",
                     "trajectory.png"]
    assert (tmp_path / "trajectory.png").read_bytes()[:4] == b"\x89PNG"
    lines = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert len(lines) == 3 * 30 + 1


def test_export_continuation_ray(tmp_path):
    rc = run(["export", "--problem", "dubins", "--out", str(tmp_path),
              "--r-ray", "1,0;0.01;2", "--samples", "10"])
    assert rc == 0
    names = sorted(os.listdir(tmp_path))
    assert names == ["bundle.json", "continuation.png", "switching.png",
                     "trajectory-000.csv", "trajectory-001.csv",
                     "trajectory-002.csv", "trajectory.png"]


def test_unknown_problem_exits_1(tmp_path, capsys):
    assert run(["solve", "--problem", "nope", "--out", str(tmp_path)]) == 1
    assert "error:" in capsys.readouterr().err


def test_bad_r_dimension_exits_1(tmp_path, capsys):
    assert run(["solve", "--problem", "dubins", "--r", "1",
                "--out", str(tmp_path)]) == 1
    assert "expected 2" in capsys.readouterr().err


def test_bad_ray_exits_1(tmp_path, capsys):
    assert run(["continue", "--problem", "dubins", "--r-ray", "1,0;x;3",
                "--out", str(tmp_path)]) == 1
    assert "error:" in capsys.readouterr().err


def test_missing_flag_exits_1(capsys):
    assert run(["solve"]) == 1
    capsys.readouterr()


def test_help_exits_0(capsys):
    assert run(["--help"]) == 0
    assert "solve" in capsys.readouterr().out


def test_certification_failure_exits_2_but_writes(tmp_path, capsys):
    # With no collar the bang margins are the junction values themselves,
    # numerically zero, which the strict-positivity gate rejects.
    doc = load_problem("dubins").to_dict()
    doc["options"] = {"collar_frac": 0.0}
    pf = tmp_path / "zero-collar.json"
    pf.write_text(json.dumps(doc))
    rc = run(["certify", "--problem", str(pf), "--out", str(tmp_path)])
    assert rc == 2
    assert "certification: FAIL" in capsys.readouterr().out
    assert (tmp_path / "bundle.json").exists()


def test_out_dir_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("BSBSHOOT_OUT", str(tmp_path / "envout"))
    assert run(["solve", "--problem", "dubins"]) == 0
    capsys.readouterr()
    assert (tmp_path / "envout" / "bundle.json").exists()


def test_problem_file_through_cli(tmp_path, capsys):
    doc = load_problem("dubins-drift").to_dict()
    doc["name"] = "windy"
    pf = tmp_path / "windy.json"
    pf.write_text(json.dumps(doc))
    assert run(["solve", "--problem", str(pf), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "problem windy" in out
    # The drift default r = (0.02, 0) is a tailwind: T drops below 8 + pi.
    m = re.search(r"T = ([0-9.]+)", out)
    assert float(m.group(1)) < 11.1415927