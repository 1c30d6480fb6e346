import json

import numpy as np
import pytest

from quadsafe import cli, verify
from quadsafe.planner import penalties


def test_run_benign(tmp_path, capsys):
    code = cli.main(["run", "--scenario", "benign", "--seed", "0", "--out", str(tmp_path)])
    assert code == cli.EXIT_OK
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["success"] is True
    assert "success" in capsys.readouterr().out


def test_run_malformed_config(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("schema_version: 1\nname: x\nmap: {lower: [0,0,0], upper: [1,1,1], resolution: 0.1, colour: red}\n"
                   "mission: {start: [0.5,0.5,0.5], goal: [0.6,0.5,0.5]}\n")
    code = cli.main(["run", "--scenario", str(bad), "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_CONFIG
    assert "map.colour" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_run_missing_scenario(capsys):
    assert cli.main(["run", "--scenario", "does_not_exist"]) == cli.EXIT_CONFIG


def test_run_collision_without_bounds(tmp_path):
    # strong lateral wind on the corridor with FRS disabled: seed 0 is blown into the wall
    code = cli.main(["run", "--scenario", "corridor", "--seed", "0", "--frs", "off", "--out", str(tmp_path)])
    assert code == cli.EXIT_COLLISION
    assert json.loads((tmp_path / "metrics.json").read_text())["outcome"] == "collision"


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path))
    assert cli.main(["export-traj", "--scenario", "figure8"]) == cli.EXIT_OK
    assert (tmp_path / "figure8" / "trajectory.csv").exists()


def test_export_traj_planned(tmp_path):
    out = tmp_path / "traj.csv"
    assert cli.main(["export-traj", "--scenario", "benign", "--out", str(out), "--dt", "0.1"]) == cli.EXIT_OK
    rows = out.read_text().splitlines()
    assert rows[0] == "t,px,py,pz,vx,vy,vz,ax,ay,az,d_q"
    data = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
    np.testing.assert_allclose(data[0, 1:4], [0.0, 0.0, 1.5], atol=1e-6)
    np.testing.assert_allclose(data[-1, 1:4], [10.0, 0.0, 1.5], atol=0.05)
    assert np.all(np.diff(data[:, 0]) > 0)


def test_verify_frs_only(capsys):
    assert cli.main(["verify", "--which", "frs"]) == cli.EXIT_OK
    lines = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith(("PASS", "FAIL"))]
    assert lines and all(ln.split()[1] == "frs" for ln in lines)


def test_verify_observer(capsys):
    assert cli.main(["verify", "--which", "observer"]) == cli.EXIT_OK


def test_verify_reports_sign_error_in_static_penalty(monkeypatch, capsys):
    original = penalties.static_penalty

    def flipped(points, esdf, threshold):
        cost, grad = original(points, esdf, threshold)
        return cost, -grad

    monkeypatch.setattr(penalties, "static_penalty", flipped)
    assert cli.main(["verify", "--which", "gradients"]) == cli.EXIT_VERIFY
    err = capsys.readouterr().err
    assert "first failure: static_penalty" in err
    example = json.loads(err.splitlines()[-1])
    assert example["check"] == "static_penalty" and "point" in example["counterexample"]


def test_verify_unknown_suite():
    with pytest.raises(ValueError):
        verify.run("everything")
    with pytest.raises(SystemExit):
        cli.main(["verify", "--which", "everything"])


def test_benchmark_command(tmp_path, capsys):
    suite = tmp_path / "s.yaml"
    suite.write_text("name: s\nscenario: benign\ntrials: 1\nconditions:\n"
                     "  - {name: short, overrides: {sim.max_time: 2.0}}\n")
    assert cli.main(["benchmark", "--suite", str(suite), "--out", str(tmp_path / "b")]) == cli.EXIT_OK
    assert (tmp_path / "b" / "summary.csv").read_text().startswith("condition,wind_mean,frs,observer")
