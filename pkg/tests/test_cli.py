import json
import sys

import pytest

import analyze
import simulate
import unravel
import verify


def run(monkeypatch, module, *argv):
    monkeypatch.setattr(sys, "argv", [module.__name__ + ".py", *argv])
    module.main()


def exit_code(monkeypatch, module, *argv):
    with pytest.raises(SystemExit) as info:
        run(monkeypatch, module, *argv)
    return info.value.code


@pytest.fixture
def sim_dir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    out = tmp_path / "sim"
    run(monkeypatch, simulate, "--n-traj", "200", "--duration-us", "0.16", "--duration-us", "0.32",
        "--initial-state", "z+", "--seed", "1", "--quiet", "--out", str(out))
    return out


def test_duration_label():
    assert simulate.duration_label(0.32e-6) == "T0.32us"
    assert simulate.duration_label(1.0152e-6) == "T1.0152us"


def test_simulate_writes_outputs(sim_dir):
    manifest = json.loads((sim_dir / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["status"] == "complete"
    for name in ("q_T0.16us.csv", "q_T0.32us.csv", "q_T0.32us.meta.json", "hist_T0.32us.csv",
                 "summary.json", "records/record_00000.csv", "records/record_00000.meta.json",
                 "trajectories/traj_00009.csv"):
        assert name in manifest["files"]
        assert (sim_dir / name).exists()
    summary = json.loads((sim_dir / "summary.json").read_text(encoding="utf-8"))
    assert summary["n_traj"] == 200
    assert set(summary["durations"]) == {"T0.16us", "T0.32us"}


def test_simulate_rejects_bad_config(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert exit_code(monkeypatch, simulate, "--eta", "1.5", "--out", str(tmp_path / "x")) == 1
    assert exit_code(monkeypatch, simulate, "missing_set") == 1


def test_analyze_existing_ensemble(sim_dir, monkeypatch):
    run(monkeypatch, analyze, str(sim_dir / "q_T0.32us.csv"), "--quiet")
    out = sim_dir / "analysis_q_T0.32us"
    result = json.loads((out / "analysis.json").read_text(encoding="utf-8"))
    assert result["n"] == 200
    assert (out / "histogram.csv").exists()
    assert json.loads((out / "manifest.json").read_text(encoding="utf-8"))["status"] == "complete"


def test_analyze_needs_sidecar(sim_dir, monkeypatch):
    (sim_dir / "q_T0.32us.meta.json").unlink()
    assert exit_code(monkeypatch, analyze, str(sim_dir / "q_T0.32us.csv")) == 1


def test_unravel_exported_record(sim_dir, monkeypatch):
    record = sim_dir / "records" / "record_00000.csv"
    run(monkeypatch, unravel, str(record), "--n-samples", "20", "--basis", "phi", "--initial-state", "z+",
        "--quiet", "--out", str(sim_dir / "unravel"))
    out = sim_dir / "unravel"
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert summary["n_samples"] == 20
    assert summary["basis"] == "incompatible_phi"
    for name in ("ensemble_summary.csv", "consistency.csv", "q_alice.csv", "q_charlie.meta.json",
                 "trajectories/unravel_00000.csv"):
        assert (out / name).exists()


def test_exported_records_are_finite_efficiency(sim_dir):
    meta = json.loads((sim_dir / "records" / "record_00000.meta.json").read_text(encoding="utf-8"))
    assert meta["eta"] == pytest.approx(0.4)
    assert meta["dephase_extra"] > 0


def test_unravel_beamsplitter_scheme(sim_dir, monkeypatch):
    record = sim_dir / "records" / "record_00000.csv"
    run(monkeypatch, unravel, str(record), "--n-samples", "20", "--basis", "z", "--scheme", "beamsplitter",
        "--initial-state", "z+", "--quiet", "--out", str(sim_dir / "unravel_bs"))
    summary = json.loads((sim_dir / "unravel_bs" / "summary.json").read_text(encoding="utf-8"))
    assert summary["scheme"] == "beamsplitter"
    assert summary["alice_fraction"] == 1.0


def test_unravel_rejects_dt_mismatch(sim_dir, monkeypatch):
    record = sim_dir / "records" / "record_00000.csv"
    assert exit_code(monkeypatch, unravel, str(record), "--dt", "8ns", "--n-samples", "2",
                     "--out", str(sim_dir / "bad")) == 1


def test_verify_report(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    run(monkeypatch, verify, "--only", "1", "--scale", "0.01", "--quiet", "--out", str(tmp_path / "v"))
    report = json.loads((tmp_path / "v" / "verify_report.json").read_text(encoding="utf-8"))
    assert report["passed"] is True
    assert [c["number"] for c in report["criteria"]] == [1]
    assert exit_code(monkeypatch, verify, "--only", "42") == 1
    assert exit_code(monkeypatch, verify, "--scale", "0") == 1
