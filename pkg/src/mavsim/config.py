"""Scenario files: JSON with a versioned ``schema`` header.

A scenario only lists what it changes; everything else comes from
``DEFAULTS``. Validation reports every problem with its field path.
See ``docs/scenario_schema.md`` for the field reference.
"""

from __future__ import annotations

import copy
import json
import math
from pathlib import Path
from typing import Any

SCHEMA = "mavsim-scenario/1"

DEFAULTS: dict[str, Any] = {
    "schema": SCHEMA,
    "name": "unnamed",
    "description": "",
    "duration": 30.0,
    "seed": 1,
    "physics_dt": 0.001,
    "log_rate": 100.0,
    "environment": {"air_density": 1.225, "gravity": 9.81},
    "airframe": {
        "mass": 0.65,
        "diameter": 0.48,
        "arm_length": 0.20,
        "inertia": [0.0039, 0.0039, 0.0078],
        "yaw_drag": 0.001,
        "torque_to_thrust": 0.016,
        "rotor_drag": 0.35,
    },
    "propeller": {"disk_area": 0.05, "efficiency": 0.65},
    "motor": {"max_constant_power": 100.0, "time_constant": 0.05, "peak_factor": 3.0},
    "battery": {
        "cells": 3,
        "capacity": 1250.0,
        "nominal_voltage": 3.7,
        "internal_resistance": 0.05,
        "cell_floor": 3.0,
    },
    # gyroscopes + accelerometer + ultrasonic + mainboards, energy table
    "electronics_power": 0.715,
    "initial": {"position": [0.0, 0.0, 1.0], "velocity": [0.0, 0.0, 0.0],
                "attitude_deg": [0.0, 0.0, 0.0], "airborne": True},
    "sensors": {
        "gyro": {"initial_bias_max": 0.02, "bias_walk": 0.0005, "noise_sigma": 0.005,
                 "calibration_residual": 0.001},
        "accel": {"noise_sigma": 0.05, "vibration_gain": 1.0},
        "ultrasonic": {"update_rate": 15.0, "max_range": 6.0, "min_range": 0.06,
                       "dropout_prob": 0.08, "half_beam_angle_deg": 30.0,
                       "quantization": 0.01, "noise_sigma": 0.003,
                       "scripted_dropouts": []},
        "vibration": {"enabled": True, "amplitude_per_watt": 0.05,
                      "base_frequency": 40.0, "frequency_per_watt": 8.0},
    },
    "estimator": {"fusion": True, "gyro_noise": 1e-4, "bias_noise": 1e-6,
                  "accel_noise": 9.0, "gate": 3.0, "gate_reset": 300},
    "control": {
        "rate_hz": 300.0,
        "attitude": {
            "mode": "angle",
            "angle": {"kp": 0.15, "ki": 0.02, "kd": 0.025, "integral_clamp": 0.5,
                      "output_clamp": 0.15, "derivative": "rate"},
            "rate": {"kp": 0.011, "ki": 0.0, "kd": 0.0, "integral_clamp": 0.5,
                     "output_clamp": 0.15, "derivative": "error"},
            "yaw": {"kp": 0.1, "ki": 0.02, "kd": 0.0, "integral_clamp": 0.5,
                    "output_clamp": 0.1, "derivative": "error"},
        },
        "position_hold": {"enabled": True, "kp": 0.0, "ki": 0.35, "ka": 0.005,
                          "integral_clamp": 0.5, "output_clamp": 0.1},
        "height": {"enabled": False, "target": 1.0, "kp": 0.05, "kd": 0.05, "limit": 0.03,
                   "derivative_filter": 0.5},
        "wall": {"enabled": False, "hold": 1.0, "kp": 0.1, "kd": 0.15,
                 "emergency_distance": 0.6, "emergency_multiplier": 1.0, "limit": 0.1,
                 "side": "right", "derivative_filter": 0.6},
    },
    "scheduler": {
        "isr_cost_us": 8,
        "pipeline_us": {"sensor_read": 150, "estimate": 1200, "control": 400, "encode": 50},
        "input_frame_rate": 50.0,
        "analysis_window_s": 0.2,
        "watchdog": {"enabled": False, "window_us": 5000},
    },
    "telemetry": {"baud": 19200, "frame_overhead": 0, "loss_prob": 0.0, "latency_ms": 2.0,
                  "queue_depth": 32, "frame_bytes": 32, "rate_hz": 20.0, "uplink_frame_bytes": 16},
    "terrain": {"floor": 0.0, "steps": []},
    "walls": [],
    "pilot": [{"t": 0.0, "throttle": 1.0, "nick": 0.0, "roll": 0.0, "yaw": 0.0}],
    "faults": [],
    "param_updates": [],
    "metrics": {"eval_start": 0.0},
    "thresholds": {},
}

# free-form sub-trees whose keys are not checked against DEFAULTS
_OPEN = {("metrics",), ("thresholds",), ("scheduler", "pipeline_us")}

THRESHOLD_KEYS = ("min", "max")


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and (k,) not in _OPEN:
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _unknown_keys(user: dict, ref: dict, path: tuple = ()) -> list[str]:
    errs = []
    for k, v in user.items():
        p = path + (k,)
        if k not in ref:
            errs.append(f"{'.'.join(p)}: unknown field")
        elif isinstance(v, dict) and isinstance(ref[k], dict) and p not in _OPEN:
            errs.extend(_unknown_keys(v, ref[k], p))
    return errs


def validate(cfg: dict) -> list[str]:
    """Return a list of ``path: problem`` strings (empty when valid)."""
    errs: list[str] = []

    def need(cond: bool, path: str, msg: str):
        if not cond:
            errs.append(f"{path}: {msg}")

    def num(path: str) -> float | None:
        node: Any = cfg
        for part in path.split("."):
            node = node[part]
        if isinstance(node, bool) or not isinstance(node, (int, float)) or not math.isfinite(node):
            errs.append(f"{path}: expected a finite number")
            return None
        return float(node)

    need(cfg.get("schema") == SCHEMA, "schema", f"expected {SCHEMA!r}")
    dt = num("physics_dt")
    dur = num("duration")
    if dt is not None:
        need(0 < dt <= 0.005, "physics_dt", "must be in (0, 0.005] s")
    if dur is not None and dt is not None:
        need(dur >= dt, "duration", "must cover at least one physics step")
    for p in ("log_rate", "environment.air_density", "environment.gravity", "airframe.mass",
              "airframe.diameter", "airframe.arm_length", "propeller.disk_area",
              "motor.max_constant_power", "motor.time_constant", "battery.capacity",
              "sensors.ultrasonic.update_rate", "electronics_power"):
        v = num(p)
        if v is not None:
            need(v > 0, p, "must be positive")
    eff = num("propeller.efficiency")
    if eff is not None:
        need(0 < eff <= 1, "propeller.efficiency", "must be in (0, 1]")
    inertia = cfg["airframe"]["inertia"]
    if not (isinstance(inertia, list) and len(inertia) == 3 and all(
            isinstance(i, (int, float)) and i > 0 for i in inertia)):
        errs.append("airframe.inertia: expected three positive numbers")
    elif inertia[0] != inertia[1]:
        errs.append("airframe.inertia: Ixx must equal Iyy")
    rate = num("control.rate_hz")
    if rate is not None:
        need(0 < rate <= 500, "control.rate_hz", "must be in (0, 500] Hz")
    need(cfg["control"]["attitude"]["mode"] in ("angle", "rate"), "control.attitude.mode",
         "must be 'angle' or 'rate'")
    for axis in ("angle", "rate", "yaw"):
        g = cfg["control"]["attitude"][axis]
        for k in ("kp", "ki", "kd"):
            v = num(f"control.attitude.{axis}.{k}")
            if v is not None:
                need(v >= 0, f"control.attitude.{axis}.{k}", "must be non-negative")
        need(g["derivative"] in ("rate", "error"), f"control.attitude.{axis}.derivative",
             "must be 'rate' or 'error'")
    lim = num("control.height.limit")
    if lim is not None:
        need(lim > 0, "control.height.limit", "must be positive")
    mult = num("control.wall.emergency_multiplier")
    if mult is not None:
        need(mult >= 1, "control.wall.emergency_multiplier", "must be >= 1")
    need(cfg["control"]["wall"]["side"] in ("left", "right"), "control.wall.side",
         "must be 'left' or 'right'")
    p_drop = num("sensors.ultrasonic.dropout_prob")
    if p_drop is not None:
        need(0 <= p_drop <= 1, "sensors.ultrasonic.dropout_prob", "must be in [0, 1]")
    p_loss = num("telemetry.loss_prob")
    if p_loss is not None:
        need(0 <= p_loss <= 1, "telemetry.loss_prob", "must be in [0, 1]")
    for k in ("gyro_noise", "bias_noise", "accel_noise", "gate"):
        v = num(f"estimator.{k}")
        if v is not None:
            need(v > 0, f"estimator.{k}", "must be positive")

    for i, step in enumerate(cfg["terrain"]["steps"]):
        path = f"terrain.steps[{i}]"
        if not isinstance(step, dict) or set(step) != {"x0", "x1", "height"}:
            errs.append(f"{path}: expected keys x0, x1, height")
            continue
        need(step["height"] >= 0, f"{path}.height", "must be >= 0")
        need(step["x0"] < step["x1"], f"{path}", "x0 must be below x1")
    for i, w in enumerate(cfg["walls"]):
        path = f"walls[{i}]"
        if not isinstance(w, dict) or w.get("side") not in ("left", "right") or \
                not isinstance(w.get("distance"), (int, float)) or w["distance"] <= 0:
            errs.append(f"{path}: expected {{side: left|right, distance > 0}}")

    pilot = cfg["pilot"]
    if not pilot:
        errs.append("pilot: at least one entry required")
    times = []
    for i, entry in enumerate(pilot):
        extra = set(entry) - {"t", "throttle", "nick", "roll", "yaw"}
        if extra:
            errs.append(f"pilot[{i}]: unknown fields {sorted(extra)}")
        if "t" not in entry:
            errs.append(f"pilot[{i}].t: required")
        else:
            times.append(entry["t"])
    if times != sorted(times):
        errs.append("pilot: timestamps must be sorted")

    for i, f in enumerate(cfg["faults"]):
        path = f"faults[{i}]"
        if "sensor" in f:
            need(f["sensor"] in ("gyro", "accel", "ultrasonic"), f"{path}.sensor",
                 "unknown sensor")
            need(f.get("kind", "loss") in ("loss", "stuck"), f"{path}.kind", "loss or stuck")
        elif "timer" in f:
            need(f["timer"] in ("lost", "delayed"), f"{path}.timer", "lost or delayed")
            need(f.get("channel", 0) in (0, 1, 2, 3), f"{path}.channel", "must be 0-3")
        else:
            errs.append(f"{path}: needs 'sensor' or 'timer'")
        t = f.get("t")
        if not isinstance(t, (int, float)) or dur is None or not 0 <= t <= dur:
            errs.append(f"{path}.t: must lie within the run")

    for i, u in enumerate(cfg["param_updates"]):
        path = f"param_updates[{i}]"
        if not {"t", "path", "value"} <= set(u):
            errs.append(f"{path}: expected t, path, value")

    for name, th in cfg["thresholds"].items():
        if not isinstance(th, dict) or not th or set(th) - set(THRESHOLD_KEYS):
            errs.append(f"thresholds.{name}: expected {{min: x}} and/or {{max: y}}")
    return errs


def load_scenario(source: str | Path | dict) -> dict:
    """Load, merge with defaults and validate. Raises ``ConfigError``."""
    if isinstance(source, dict):
        user = source
    else:
        try:
            user = json.loads(Path(source).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError([f"<file>: invalid JSON ({exc})"]) from exc
    if not isinstance(user, dict):
        raise ConfigError(["<root>: expected a JSON object"])
    errs = _unknown_keys(user, DEFAULTS)
    if errs:
        raise ConfigError(errs)
    cfg = deep_merge(DEFAULTS, user)
    try:
        errs = validate(cfg)
    except (KeyError, TypeError) as exc:
        errs = [f"<structure>: {exc!r}"]
    if errs:
        raise ConfigError(errs)
    return cfg


def dump_scenario(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True)


def get_path(cfg: dict, path: str) -> Any:
    node: Any = cfg
    for part in path.split("."):
        node = node[part]
    return node


def set_path(cfg: dict, path: str, value: Any) -> dict:
    out = copy.deepcopy(cfg)
    node = out
    parts = path.split(".")
    for part in parts[:-1]:
        node = node[part]
    if parts[-1] not in node:
        raise KeyError(path)
    node[parts[-1]] = value
    return out
