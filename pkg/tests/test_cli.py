import csv
import io
import json
import math
import shutil
import subprocess

import pytest

from relay_harvest import cli
from relay_harvest.experiments import fixture_path
from relay_harvest.model import scenario_to_dict
from relay_harvest.experiments import load_fixture


def _run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def solved(tmp_path):
    out = tmp_path / "sym.json"
    assert _run("solve", fixture_path("symmetric"), "-o", out) == cli.EXIT_OK
    return out


def test_solve_symmetric(solved):
    doc = json.loads(solved.read_text())
    assert doc["throughput_nats"] == pytest.approx(0.693147, abs=1e-6)
    assert doc["throughput_bits"] == pytest.approx(1.0, abs=1e-9)
    assert doc["certified"] is True
    assert {"policy", "powers", "duals", "diagnostics", "residual_energy"} <= set(doc)
    assert "wall_time" not in doc["diagnostics"]


def test_solve_with_mode_flag(tmp_path):
    out = tmp_path / "eh.json"
    assert _run("solve", fixture_path("fig3_eh"), "--modes", "sr", "-o", out) == 0
    doc = json.loads(out.read_text())
    assert doc["throughput_nats"] > 0
    assert sorted(doc["scenario"]["modes"]) == ["SR-I", "SR-II"]


def test_solve_output_is_byte_stable(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        assert _run("solve", fixture_path("fig5"), "-o", p) == 0
    assert a.read_bytes() == b.read_bytes()


def test_malformed_scenario(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"gains": {"sr1": 1}, "epochs": [], "color": "red"}', encoding="utf-8")
    assert _run("solve", bad) == cli.EXIT_INVALID
    assert "error:" in capsys.readouterr().err
    assert _run("solve", tmp_path / "missing.json") == cli.EXIT_INVALID
    assert _run("solve", fixture_path("symmetric"), "--modes", "sr") == cli.EXIT_INVALID


def test_uncertified_solve_exit_code(tmp_path, monkeypatch):
    real = cli.solve

    def stalled(s):
        sol = real(s)
        sol.certified, sol.status = False, "stalled"
        return sol

    monkeypatch.setattr(cli, "solve", stalled)
    assert _run("solve", fixture_path("symmetric"), "-o", tmp_path / "x.json") == cli.EXIT_UNCERTIFIED


def test_verify_round_trip(solved, tmp_path):
    rep = tmp_path / "rep.json"
    assert _run("verify", solved, "-o", rep) == cli.EXIT_OK
    doc = json.loads(rep.read_text())
    assert doc["passed"] is True and doc["problems"] == []
    stored = json.loads(solved.read_text())["throughput_nats"]
    assert abs(doc["objective"]["policy"] - stored) <= 1e-10 * stored


def test_verify_tampered_throughput(solved, tmp_path):
    doc = json.loads(solved.read_text())
    doc["throughput_nats"] *= 1.5
    bad = tmp_path / "tampered.json"
    bad.write_text(json.dumps(doc), encoding="utf-8")
    rep = tmp_path / "rep.json"
    assert _run("verify", bad, "-o", rep) == cli.EXIT_VIOLATION
    assert "objective_mismatch" in json.loads(rep.read_text())["problems"]


def test_verify_malformed_result(tmp_path):
    p = tmp_path / "r.json"
    p.write_text('{"scenario": {}}', encoding="utf-8")
    assert _run("verify", p) == cli.EXIT_INVALID


def test_verify_fig5_successive_relaying(tmp_path):
    doc = scenario_to_dict(load_fixture("fig5").with_arrival("R2", 1, 2.0))
    scen = tmp_path / "fig5.json"
    scen.write_text(json.dumps(doc), encoding="utf-8")
    res, rep = tmp_path / "res.json", tmp_path / "rep.json"
    assert _run("solve", scen, "--modes", "sr", "-o", res) == 0
    assert _run("verify", res, "-o", rep) == 0
    r = json.loads(rep.read_text())
    assert "R2" in r["residual_energy"]
    assert r["properties"]["lemmas"]["lemma7"]["applicable"] is True
    assert r["properties"]["lemmas"]["lemma7"]["passed"] is True


def test_tolerance_override(solved, monkeypatch):
    monkeypatch.setenv("RELAY_HARVEST_TOL", "deviation=1e-3")
    assert _run("verify", solved, "-o", solved.with_suffix(".rep")) == 0
    monkeypatch.setenv("RELAY_HARVEST_TOL", "bogus=1")
    assert _run("verify", solved, "-o", solved.with_suffix(".rep")) == cli.EXIT_INVALID


def test_sweep_single_value(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"base": "fig5", "parameter": "E_r2,2", "values": [2.0],
                                "mode_sets": ["bc+sr"]}), encoding="utf-8")
    assert _run("sweep", spec, "--bits") == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 1
    r = rows[0]
    assert float(r["throughput_bits"]) == pytest.approx(float(r["throughput_nats"]) / math.log(2),
                                                        rel=1e-11)


def test_figure5_writes_two_csvs(tmp_path):
    assert _run("figure", "5", "--outdir", tmp_path) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["fig5.csv", "fig5_residual.csv"]


def test_figure_bad_grid(tmp_path):
    assert _run("figure", "6", "--outdir", tmp_path, "--grid", "es1_step") == cli.EXIT_INVALID
    assert _run("figure", "6", "--outdir", tmp_path, "--grid", "nope=1") == cli.EXIT_INVALID


def test_console_script_installed():
    exe = shutil.which("relay-harvest")
    if exe is None:
        pytest.skip("package not installed with its console script")
    out = subprocess.run([exe, "solve", str(fixture_path("symmetric"))], capture_output=True,
                         text=True, check=False)
    assert out.returncode == 0
    assert json.loads(out.stdout)["throughput_bits"] == pytest.approx(1.0)
