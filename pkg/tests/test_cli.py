import json
import subprocess
import sys

import pytest

from kdvb_shock.cli import main


@pytest.fixture()
def small_json(tmp_path, small_config):
    p = tmp_path / "small.json"
    p.write_text(json.dumps(small_config.to_dict()))
    return str(p)


def test_profile_command(tmp_path, capsys):
    out = tmp_path / "prof"
    assert main(["profile", "--out", str(out)]) == 0
    doc = json.loads((out / "profile.json").read_text())
    assert doc["sigma0"] == pytest.approx(0.91608, abs=1e-5)
    assert (out / "profile.csv").read_text().startswith("# sigma0=")
    assert "profile_residual" in capsys.readouterr().out


def test_bad_config_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"N": 1601}))
    assert main(["profile", "--config", str(bad), "--out", str(tmp_path)]) == 2
    bad.write_text("{not json")
    assert main(["profile", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["profile", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2


def test_report_without_manifest_exits_2(tmp_path):
    assert main(["report", "--out", str(tmp_path)]) == 2


def test_simulate_then_report(tmp_path, small_json, capsys):
    out = str(tmp_path / "run")
    assert main(["simulate", "--config", small_json, "--out", out]) == 0
    assert main(["report", "--out", out]) == 0
    text = capsys.readouterr().out
    assert "eta_inf_ode" in text and "fail" not in text


def test_periodic_then_shift_reuses_histories(tmp_path, small_json):
    out = tmp_path / "ps"
    assert main(["periodic", "--config", small_json, "--out", str(out)]) == 0
    stamp = (out / "periodic_left.json").stat().st_mtime_ns
    assert main(["shift", "--config", small_json, "--out", str(out)]) == 0
    assert (out / "periodic_left.json").stat().st_mtime_ns == stamp
    doc = json.loads((out / "shift.json").read_text())
    assert abs(doc["eta_inf_formula"] - doc["eta_inf_ode"]) <= 1e-3


def test_failing_scenario_exits_1(tmp_path, small_config):
    p = tmp_path / "short.json"
    p.write_text(json.dumps(small_config.replace(T=2.0).to_dict()))
    out = str(tmp_path / "short")
    assert main(["simulate", "--config", str(p), "--out", out]) == 1
    assert main(["report", "--out", out]) == 1


def test_module_help():
    res = subprocess.run([sys.executable, "-m", "kdvb_shock", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("profile", "periodic", "shift", "simulate", "study", "report"):
        assert cmd in res.stdout
