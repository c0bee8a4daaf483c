import subprocess
import sys

import pytest

from memgov.cli import main
from memgov.config import build_config
from memgov.gateway import Gateway

from .test_gateway import SESSION, encode, seed_dir


@pytest.fixture
def data(tmp_path):
    d = seed_dir(tmp_path / "data")
    gw = Gateway.open(build_config(d))
    for req in SESSION:
        gw.handle_line(encode(req))
    gw.close()
    return d


def test_verify_exit_codes(data, capsys):
    assert main(["verify", "--data-dir", str(data)]) == 0
    assert "4 entries" in capsys.readouterr().out
    path = data / "ledger.jsonl"
    raw = bytearray(path.read_bytes())
    raw[raw.index(b"kickoff")] ^= 0x01
    path.write_bytes(bytes(raw))
    assert main(["verify", "--data-dir", str(data)]) == 1
    assert "INVALID at seq 0" in capsys.readouterr().out


def test_verify_empty_dir(tmp_path):
    assert main(["verify", "--data-dir", str(tmp_path)]) == 0


def test_usage_errors(tmp_path, capsys):
    assert main(["frobnicate"]) == 2
    assert main([]) == 2
    assert main(["verify", "--data-dir", str(tmp_path), "--set", "gate_mode=maybe"]) == 2
    assert main(["verify", "--data-dir", str(tmp_path), "--set", "nonsense"]) == 2


def test_reconcile_prints_report(data, capsys):
    assert main(["reconcile", "--data-dir", str(data)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "step,units_checked,units_corrected,pre_drift,post_drift"
    assert out[1] == "4,0,0,0.0,0.0"
    assert (data / "reconcile_report.csv").read_text().splitlines()[1] == "4,0,0,0.0,0.0"
    assert main(["reconcile", "--data-dir", str(data), "--mode", "per_unit_correct", "--threshold", "0.2"]) == 0


def test_reconcile_tampered_exits_1(data):
    path = data / "ledger.jsonl"
    path.write_text(path.read_text().replace("paris", "pariz", 1))
    assert main(["reconcile", "--data-dir", str(data)]) == 1


def test_query_respects_acl(data, capsys):
    assert main(["query", "alice lives", "--data-dir", str(data), "--principal", "alice",
                 "--attr", "tenant=a"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("1\t0.") and "alice lives in paris" in out
    assert main(["query", "alice lives", "--data-dir", str(data), "--principal", "bob",
                 "--attr", "tenant=b"]) == 0
    assert capsys.readouterr().out == ""


def test_simulate_drift_rows_and_report(tmp_path, capsys):
    out = tmp_path / "drift.csv"
    assert main(["simulate", "drift", "--out", str(out), "--steps", "30", "--window", "10",
                 "--seeds", "2", "--corpus-size", "8"]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 1 + 2 * 2 * 31
    capsys.readouterr()
    assert main(["report", str(out)]) == 0
    table = capsys.readouterr().out
    assert "naive" in table and "governed" in table
    assert main(["report", str(tmp_path / "missing.csv")]) == 1


def test_simulate_defaults_row_count(tmp_path):
    out = tmp_path / "d.csv"
    assert main(["simulate", "drift", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 1 + 2 * 10 * 201


def test_simulate_experiment_file(tmp_path, capsys):
    exp = tmp_path / "exp.ini"
    exp.write_text("[leakage]\ntenants=3\nsecrets=4\nqueries=200\n[latency]\nwrites=50\n")
    leak = tmp_path / "leak.csv"
    assert main(["simulate", "leakage", "--experiment", str(exp), "--out", str(leak)]) == 0
    rows = leak.read_text().splitlines()
    assert rows[0] == "tenants,policy_on,leakage_rate" and rows[1] == "3,true,0.0"
    lat = tmp_path / "lat.csv"
    assert main(["simulate", "latency", "--experiment", str(exp), "--out", str(lat), "--modes", "off,sync"]) == 0
    assert [r.split(",")[0] for r in lat.read_text().splitlines()[1:]] == ["off", "sync"]


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "memgov", "verify", "--data-dir", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "ledger valid: 0 entries" in res.stdout


def test_simulate_scenarios(tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert main(["simulate", "scenarios", "--out", str(out), "--seed", "2"]) == 0
    assert len(out.read_text().splitlines()) == 6
    assert "poisoning: poison_admit_rate ungoverned=1.0000 governed=0.0000" in capsys.readouterr().out
