import json

import pytest

from mavsim.cli import main

TINY = {"schema": "mavsim-scenario/1", "name": "tiny", "duration": 1.0, "seed": 2,
        "thresholds": {"deadline_misses": {"max": 0}}}


@pytest.fixture
def scenario(tmp_path):
    p = tmp_path / "tiny.json"
    p.write_text(json.dumps(TINY))
    return p


def test_validate_ok(scenario, capsys):
    assert main(["validate", str(scenario)]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 1 and out[0].startswith("ok: tiny")


def test_validate_bad_config_lists_paths(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"duration": 0.0, "control": {"rate_hz": "fast"}}))
    assert main(["validate", str(p)]) == 2
    summary = json.loads(capsys.readouterr().out)
    assert summary["error"] == "config"
    assert any(e.startswith("control.rate_hz") for e in summary["errors"])


def test_run_writes_output_directory(scenario, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", str(scenario), "--out", str(out), "--seed", "5"]) == 0
    for name in ("config.json", "runlog.csv", "annotations.json", "metrics.json"):
        assert (out / name).exists()
    assert json.loads((out / "config.json").read_text())["seed"] == 5
    assert (out / "plots" / "gyro.csv").exists() and (out / "plots" / "gyro.png").exists()
    assert json.loads(capsys.readouterr().out)["passed"] is True


def test_threshold_violation_exit_code(tmp_path, capsys):
    p = tmp_path / "strict.json"
    p.write_text(json.dumps({**TINY, "thresholds": {"max_tilt": {"max": 0.0}}}))
    assert main(["run", str(p), "--out", str(tmp_path / "r"), "--no-png"]) == 1
    summary = json.loads(capsys.readouterr().out)
    assert "max_tilt" in summary["failures"]


def test_sweep_rates(scenario, tmp_path, capsys):
    out = tmp_path / "sweep"
    rc = main(["sweep", str(scenario), "--param", "control.rate_hz", "--values", "50,100,300",
               "--out", str(out), "--no-png"])
    assert rc == 0
    dirs = sorted(p.name for p in out.iterdir() if p.is_dir())
    assert dirs == ["rate_hz=100", "rate_hz=300", "rate_hz=50"]
    table = (out / "comparison.csv").read_text().splitlines()
    assert table[0].startswith("control.rate_hz,passed,rms_attitude_error")
    assert [r.split(",")[0] for r in table[1:]] == ["50", "100", "300"]


def test_sweep_unknown_param(scenario, capsys):
    assert main(["sweep", str(scenario), "--param", "control.nope", "--values", "1"]) == 2


def test_plots_from_saved_log(scenario, tmp_path, capsys):
    out = tmp_path / "run"
    main(["run", str(scenario), "--out", str(out), "--no-png"])
    capsys.readouterr()
    assert main(["plots", str(out / "runlog.csv"), "--preset", "height",
                 "--out", str(tmp_path / "p"), "--no-png"]) == 0
    assert (tmp_path / "p" / "height.csv").exists()
    assert main(["plots", str(out / "runlog.csv"), "--series", "t,nope",
                 "--out", str(tmp_path / "p")]) == 2
    assert "available" in capsys.readouterr().out


def test_budget_table(capsys):
    assert main(["budget"]) == 0
    out = capsys.readouterr().out
    assert "45.715" in out and "18.2 min" in out and "derived" in out


def test_scale_report(capsys):
    assert main(["scale", "--diameter", "0.96"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["linear_scale"] == pytest.approx(2.0)
    assert rep["thrust_margin_ratio"] < 1.0


def test_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["run"])
    assert exc.value.code != 0
