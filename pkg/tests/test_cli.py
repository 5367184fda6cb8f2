"""Command line driver: verbs, flags, and the exit-code contract."""

import json

import pytest

from stiflow.cli import main


def write_tiny_config(tmp_path, **overrides):
    raw = {
        "phantom": "translating_disk",
        "image": {"nx": 32, "ny": 32},
        "time": {"num_steps": 4, "obs_indices": [2, 4]},
        "kernel": {"control_n": 6, "sigma": 0.3},
        "angles": {"per_time": 6},
        "optimizer": {"max_outer_iters": 3, "substeps_per_interval": 1},
        "out_dir": str(tmp_path / "out"),
    }
    raw.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(raw))
    return path


def test_info_exits_zero(capsys):
    assert main(["info"]) == 0
    out = capsys.readouterr().out
    assert "phantoms:" in out and "verify suites:" in out


def test_info_echoes_resolved_config(tmp_path, capsys):
    cfg = write_tiny_config(tmp_path)
    assert main(["info", "--config", str(cfg), "--seed", "9"]) == 0
    out = capsys.readouterr().out
    assert '"seed": 9' in out


def test_phantom_and_simulate_write_artifacts(tmp_path, capsys):
    cfg = write_tiny_config(tmp_path)
    ph = tmp_path / "ph"
    assert main(["phantom", "--config", str(cfg), "--out", str(ph)]) == 0
    assert (ph / "template.f32").exists()
    assert (ph / "velocity.json").exists()
    assert (ph / "frames" / "truth_manifest.json").exists()
    sim = tmp_path / "sim"
    assert main(["simulate", "--config", str(cfg), "--out", str(sim)]) == 0
    assert (sim / "sinogram_00.f32").exists()
    assert (sim / "sinogram_01.f32").exists()
    meta = json.loads((sim / "simulation.json").read_text())
    assert meta["times"] == [0.5, 1.0]


def test_reconstruct_and_exit_codes(tmp_path, capsys):
    cfg = write_tiny_config(tmp_path)
    assert main(["reconstruct", "--config", str(cfg)]) == 0
    assert (tmp_path / "out" / "metrics.json").exists()
    assert "artifacts in" in capsys.readouterr().out


def test_config_errors_exit_two(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"phantom": "translating_disk", "typo_key": 1}))
    assert main(["reconstruct", "--config", str(bad)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError"
    missing = tmp_path / "nope.json"
    assert main(["phantom", "--config", str(missing)]) == 2
    mu2 = tmp_path / "mu2.json"
    mu2.write_text(json.dumps({"phantom": "translating_disk", "weights": {"mu2": 0.0}}))
    out = tmp_path / "failed"
    assert main(["reconstruct", "--config", str(mu2), "--out", str(out)]) == 2
    capsys.readouterr()
    # the error report also lands in the output directory
    report = json.loads((out / "error.json").read_text())
    assert report["error"] == "ConfigError"


def test_unknown_suite_exits_two(capsys):
    assert main(["verify", "--suite", "nope"]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "UnknownSuite"


def test_verify_suite_passes_and_writes_report(tmp_path, capsys):
    out = tmp_path / "verify"
    assert main(["verify", "--suite", "mollifier", "--out", str(out)]) == 0
    stdout = capsys.readouterr().out
    assert "PASS" in stdout and "all 4 checks passed" in stdout
    report = json.loads((out / "verify_report.json").read_text())
    assert report["passed"] is True
    assert report["suites"][0]["suite"] == "mollifier"


def test_verify_failure_exits_four(tmp_path, monkeypatch, capsys):
    import stiflow.verify as verify_module

    def failing_suite():
        return [
            {"name": "forced", "value": 2.0, "op": "<=", "bound": 1.0, "passed": False}
        ]

    monkeypatch.setitem(verify_module._SUITE_FUNCS, "mollifier", failing_suite)
    out = tmp_path / "verify"
    assert main(["verify", "--suite", "mollifier", "--out", str(out)]) == 4
    stdout = capsys.readouterr().out
    assert "FAIL" in stdout
    report = json.loads((out / "verify_report.json").read_text())
    assert report["passed"] is False


def test_thread_cap_env(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("STIFLOW_THREADS", "2")
    out = tmp_path / "verify"
    assert main(["verify", "--suite", "mollifier", "--out", str(out)]) == 0
    import os

    assert os.environ["OMP_NUM_THREADS"] == "2"
    capsys.readouterr()
    monkeypatch.setenv("STIFLOW_THREADS", "zero point five")
    assert main(["info"]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError"
