"""Shipped scenarios that the acceptance suite does not already exercise
must meet the thresholds recorded in their own files."""

from pathlib import Path

import pytest

from mavsim import load_scenario, run_scenario
from mavsim.cli import main

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.mark.parametrize("path", sorted(SCENARIOS.glob("*.json")), ids=lambda p: p.stem)
def test_every_scenario_validates(path, capsys):
    assert main(["validate", str(path)]) == 0


@pytest.mark.parametrize("name", ["hover", "tuning_session", "start_landing"])
def test_scenario_thresholds(name):
    cfg = load_scenario(SCENARIOS / f"{name}.json")
    assert cfg["thresholds"]
    _, rep = run_scenario(cfg)
    assert rep.passed, rep.failures()


def test_tuning_session_crosses_threshold():
    log, rep = run_scenario(SCENARIOS / "tuning_session.json")
    th = load_scenario(SCENARIOS / "tuning_session.json")["thresholds"]
    limit = th["rms_attitude_error_after"]["max"]
    assert rep.metrics["rms_attitude_error_before"] > limit > rep.metrics["rms_attitude_error_after"]
    applied = [a for a in log.annotations if a["event"] == "param_update"]
    assert [a["value"] for a in applied] == [0.012, 0.025]
