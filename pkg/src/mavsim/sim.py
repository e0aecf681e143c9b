"""Closed-loop scenario runner.

Time advances in integer microseconds. The rigid body integrates in steps of
at most ``physics_dt`` between discrete events: ultrasonic pings, control
cycles at the regulation rate, and log samples. Everything random comes from
per-subsystem generators spawned off the scenario seed, so a scenario and
seed fully determine the run.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from . import airframe as af
from . import scheduler as sch
from .config import ConfigError, get_path, load_scenario, set_path
from .control import (AttitudeGains, AttitudeState, HeightControlConfig, PidGains,
                      PositionHoldGains, PositionHoldState, RangeLoopState, WallAvoidConfig,
                      attitude_control, height_control, position_hold, wall_avoidance)
from .estimation import EstimatorState, FilterTuning, predict, translational_accel, update
from .sensors import (ULTRASONIC_DIRECTIONS, ULTRASONIC_NAMES, AccelModel, FaultInjector,
                      FaultSpec, GyroModel, SensorFrame, UltrasonicModel, VibrationSource,
                      accel_sample, beam_geometry, gyro_sample, ultrasonic_sample,
                      vibration_signal)
from .telemetry import TelemetryLink, link_transmit

RUNLOG_SCHEMA = "mavsim-runlog/1"

LOG_COLUMNS = (
    "t", "x", "y", "z", "vx", "vy", "vz", "roll", "pitch", "yaw", "p", "q", "r",
    "gyro_x", "gyro_y", "gyro_z", "accel_x", "accel_y", "us_down", "us_side",
    "est_roll", "est_pitch", "est_yaw", "est_bias_x", "est_bias_y",
    "pilot_throttle", "pilot_nick", "pilot_roll", "pilot_yaw",
    "sp_roll", "sp_nick", "throttle", "height_delta", "wall_corr",
    "dem_roll", "dem_nick", "dem_yaw", "motor_0", "motor_1", "motor_2", "motor_3",
    "batt_v", "batt_mah", "ground", "wall_dist", "est_rejected",
    "gyro_valid", "accel_valid", "mode",
)
MODE_CODES = {"angle": 0, "rate": 1, "inoperative": 2}

# runtime-tunable parameters: path -> validator
_GAIN = (0.0, 10.0)
TUNABLE: dict[str, Any] = {}
for _axis in ("angle", "rate", "yaw"):
    for _k in ("kp", "ki", "kd"):
        TUNABLE[f"control.attitude.{_axis}.{_k}"] = _GAIN
    TUNABLE[f"control.attitude.{_axis}.output_clamp"] = (1e-6, 1.0)
    TUNABLE[f"control.attitude.{_axis}.integral_clamp"] = (1e-6, 10.0)
TUNABLE.update({
    "control.attitude.mode": ("angle", "rate"),
    "control.position_hold.enabled": (True, False),
    "control.position_hold.kp": _GAIN,
    "control.position_hold.ki": _GAIN,
    "control.position_hold.ka": _GAIN,
    "control.height.enabled": (True, False),
    "control.height.target": (0.1, 6.0),
    "control.height.kp": _GAIN,
    "control.height.kd": _GAIN,
    "control.height.limit": (1e-6, 0.5),
    "control.wall.enabled": (True, False),
    "control.wall.hold": (0.3, 6.0),
    "control.wall.kp": _GAIN,
    "control.wall.kd": _GAIN,
    "control.wall.emergency_distance": (0.0, 6.0),
    "control.wall.emergency_multiplier": (1.0, 20.0),
    "estimator.fusion": (True, False),
})


def check_update(path: str, value: Any) -> str | None:
    """Reason the update is refused, or None if acceptable."""
    allowed = TUNABLE.get(path)
    if allowed is None:
        return f"{path} is not runtime-tunable"
    if isinstance(allowed[0], (bool, str)):
        return None if value in allowed and type(value) is type(allowed[0]) else \
            f"{path} must be one of {list(allowed)}"
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        return f"{path} must be a number"
    lo, hi = allowed
    if not lo <= value <= hi:
        return f"{path}={value} outside [{lo}, {hi}]"
    return None


class SimulationAborted(RuntimeError):
    def __init__(self, t: float, reason: str):
        super().__init__(f"t={t:.6f}s: {reason}")
        self.t = t
        self.reason = reason


@dataclass
class RunLog:
    columns: dict[str, np.ndarray]
    annotations: list[dict] = field(default_factory=list)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    def to_csv(self) -> str:
        names = self.names
        buf = io.StringIO()
        buf.write(",".join(names) + "\n")
        cols = [self.columns[n].tolist() for n in names]
        for row in zip(*cols):
            buf.write(",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, annotations: list[dict] | None = None) -> "RunLog":
        lines = text.strip().splitlines()
        names = lines[0].split(",")
        data = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
        arr = np.array(data, dtype=float).reshape(len(data), len(names))
        return cls({n: arr[:, i].copy() for i, n in enumerate(names)}, annotations or [])

    def window(self, t0: float, t1: float = math.inf) -> np.ndarray:
        t = self.columns["t"]
        return (t >= t0 - 1e-9) & (t <= t1 + 1e-9)


@dataclass
class MetricsReport:
    metrics: dict[str, Any]
    checks: dict[str, dict]

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks.values())

    def failures(self) -> dict[str, dict]:
        return {k: v for k, v in self.checks.items() if not v["pass"]}

    def to_dict(self) -> dict:
        return {"passed": self.passed, "metrics": self.metrics, "checks": self.checks}

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


class Terrain:
    """Piecewise-constant floor height along world x."""

    def __init__(self, floor: float = 0.0, steps=()):
        self.floor = floor
        self.steps = [(s["x0"], s["x1"], s["height"]) for s in steps]

    def height_at(self, x: float) -> float:
        h = self.floor
        for x0, x1, height in self.steps:
            if x0 <= x < x1 and height > h:
                h = height
        return h


class PilotProfile:
    """Piecewise-linear stick profile; missing keys carry the previous value."""

    KEYS = ("throttle", "nick", "roll", "yaw")

    def __init__(self, entries):
        self.t = []
        self.v = []
        prev = {"throttle": 1.0, "nick": 0.0, "roll": 0.0, "yaw": 0.0}
        for e in entries:
            prev = {k: float(e.get(k, prev[k])) for k in self.KEYS}
            self.t.append(float(e["t"]))
            self.v.append(prev)

    def at(self, t: float) -> dict[str, float]:
        ts = self.t
        if t <= ts[0]:
            return dict(self.v[0])
        if t >= ts[-1]:
            return dict(self.v[-1])
        i = int(np.searchsorted(ts, t, side="right")) - 1
        t0, t1 = ts[i], ts[i + 1]
        a = (t - t0) / (t1 - t0) if t1 > t0 else 1.0
        return {k: self.v[i][k] + a * (self.v[i + 1][k] - self.v[i][k]) for k in self.KEYS}


def _pid(d: dict) -> PidGains:
    return PidGains(d["kp"], d["ki"], d["kd"], d["integral_clamp"], d["output_clamp"],
                    d["derivative"])


class Simulation:
    """One closed-loop run of a validated scenario dict."""

    def __init__(self, cfg: dict | str):
        self.cfg = load_scenario(cfg)
        c = self.cfg
        self.env = af.Environment(**c["environment"])
        a = c["airframe"]
        self.frame = af.AirframeConfig(mass=a["mass"], diameter=a["diameter"],
                                       arm_length=a["arm_length"], inertia=tuple(a["inertia"]),
                                       yaw_drag=a["yaw_drag"],
                                       torque_to_thrust=a["torque_to_thrust"],
                                       rotor_drag=a["rotor_drag"])
        self.disk = af.PropellerDisk(**c["propeller"])
        m = c["motor"]
        self.max_power = m["max_constant_power"]
        self.peak_power = m["max_constant_power"] * m["peak_factor"]
        self.tau = m["time_constant"]
        self.hover_power = af.hover_power_per_motor(self.frame, self.env, self.disk)
        self.hover_throttle = self.hover_power / self.max_power

        seeds = np.random.SeedSequence(int(c["seed"])).spawn(8)
        (self.rng_gyro, self.rng_accel, self.rng_us, self.rng_vib, self.rng_init,
         self.rng_link_up, self.rng_link_down, _spare) = [np.random.default_rng(s) for s in seeds]

        self.control_rate = float(c["control"]["rate_hz"])
        s = c["sensors"]
        g = s["gyro"]
        bias0 = tuple(float(b) for b in self.rng_init.uniform(-1, 1, 3) * g["initial_bias_max"])
        self.gyro = GyroModel(bias=bias0, bias_walk=g["bias_walk"], noise_sigma=g["noise_sigma"],
                              sample_rate=self.control_rate)
        # firmware zeroes the gyros on the ground before takeoff
        self.gyro_offset = tuple(b + float(e) for b, e in
                                 zip(bias0, self.rng_init.normal(0, g["calibration_residual"], 3)))
        self.accel = AccelModel(**s["accel"])
        u = s["ultrasonic"]
        self.ultrasonic = UltrasonicModel(
            update_rate=u["update_rate"], max_range=u["max_range"], min_range=u["min_range"],
            dropout_prob=u["dropout_prob"], half_beam_angle=math.radians(u["half_beam_angle_deg"]),
            quantization=u["quantization"], noise_sigma=u["noise_sigma"],
            scripted_dropouts=tuple(tuple(w) for w in u["scripted_dropouts"]))
        v = s["vibration"]
        phases = tuple(float(p) for p in self.rng_init.uniform(0, 2 * math.pi, 4))
        self.vibration = VibrationSource(
            amplitude_per_watt=v["amplitude_per_watt"] if v["enabled"] else 0.0,
            base_frequency=v["base_frequency"], frequency_per_watt=v["frequency_per_watt"],
            phases=phases)
        e = c["estimator"]
        self.tuning = FilterTuning(gyro_noise=e["gyro_noise"], bias_noise=e["bias_noise"],
                                   accel_noise=e["accel_noise"], gate=e["gate"],
                                   gate_reset=e["gate_reset"], gravity=self.env.gravity)
        self.terrain = Terrain(c["terrain"]["floor"], c["terrain"]["steps"])
        self.walls = c["walls"]
        self.pilot = PilotProfile(c["pilot"])
        self.sensor_faults = [FaultSpec(f["sensor"], float(f["t"]), f.get("kind", "loss"),
                                        f.get("index")) for f in c["faults"] if "sensor" in f]
        self.timer_faults = [f for f in c["faults"] if "timer" in f]
        self.injector = FaultInjector(self.sensor_faults)
        self.link = TelemetryLink(**{k: c["telemetry"][k] for k in (
            "baud", "frame_overhead", "loss_prob", "latency_ms", "queue_depth")})
        b = c["battery"]
        self.battery = af.BatteryState(cells=b["cells"], capacity=b["capacity"],
                                       charge_remaining=b["capacity"],
                                       nominal_voltage=b["nominal_voltage"],
                                       internal_resistance=b["internal_resistance"],
                                       cell_floor=b["cell_floor"],
                                       terminal_voltage=b["cells"] * 4.2)
        self.isr_model = sch.IsrCostModel(costs_us={
            sch.INPUT_EDGE: c["scheduler"]["isr_cost_us"],
            sch.OUTPUT_TIMER: c["scheduler"]["isr_cost_us"],
            sch.TELEMETRY_SLOT: c["scheduler"]["isr_cost_us"],
            sch.COMPUTE_SLOT: 1000})
        pipeline = list(c["scheduler"]["pipeline_us"].items())
        try:
            self.frame_schedule = sch.schedule_frame(pipeline, self.control_rate, self.isr_model,
                                                     4 * 2 * c["scheduler"]["input_frame_rate"])
        except sch.SchedulabilityError as exc:
            raise ConfigError([f"scheduler.pipeline_us: {exc}"]) from exc
        self._build_controllers()
        self.pending_updates: list[dict] = []
        self._uplink_busy_us = 0
        for upd in c["param_updates"]:
            self.apply_param_update(upd["path"], upd["value"], float(upd["t"]))

    # -- parameters ------------------------------------------------------------

    def _build_controllers(self):
        c = self.cfg["control"]
        at = c["attitude"]
        self.mode = at["mode"]
        self.att_gains = AttitudeGains(_pid(at["angle"]), _pid(at["rate"]), _pid(at["yaw"]))
        ph = c["position_hold"]
        self.ph_enabled = ph["enabled"]
        self.ph_gains = PositionHoldGains(ph["kp"], ph["ki"], ph["ka"], ph["integral_clamp"],
                                          ph["output_clamp"])
        h = c["height"]
        self.height_cfg = HeightControlConfig(h["target"], h["kp"], h["kd"], h["limit"],
                                              h["enabled"], h["derivative_filter"])
        w = c["wall"]
        self.wall_cfg = WallAvoidConfig(w["hold"], w["kp"], w["kd"], w["emergency_distance"],
                                        w["emergency_multiplier"], w["limit"], w["side"],
                                        w["enabled"], w["derivative_filter"])
        self.fusion = self.cfg["estimator"]["fusion"]

    def apply_param_update(self, path: str, value: Any, t: float) -> dict:
        """Send a parameter change over the uplink at time ``t``.

        The change takes effect at the first control cycle at or after its
        delivery. Validation happens on board at delivery; refused updates
        leave the vehicle untouched. Returns the acknowledgment record.
        """
        t_us = round(t * 1e6)
        nbytes = self.cfg["telemetry"]["uplink_frame_bytes"]
        start = max(t_us, self._uplink_busy_us)
        end = start + self.link.serialization_us(nbytes)
        self._uplink_busy_us = end
        lost = self.rng_link_up.random() < self.link.loss_prob
        ack = {"t_sent": t, "path": path, "value": value,
               "delivered_us": None if lost else end + round(self.link.latency_ms * 1000),
               "status": "lost" if lost else "pending", "reason": None}
        if not lost:
            reason = check_update(path, value)
            if reason:
                ack["status"] = "rejected"
                ack["reason"] = reason
        self.pending_updates.append(ack)
        return ack

    # -- physics helpers -------------------------------------------------------

    def _ranges(self, state: af.RigidState, t: float) -> list[float]:
        x, y, z = state.position
        q = state.orientation
        out = []
        for name in ULTRASONIC_NAMES:
            d_body = ULTRASONIC_DIRECTIONS[name]
            dist, normal = math.inf, None
            if name == "down":
                dist, normal = z - self.terrain.height_at(x), (0.0, 0.0, -1.0)
            else:
                for w in self.walls:
                    if w["side"] == name:
                        if name == "right":
                            dist, normal = y + w["distance"], (0.0, -1.0, 0.0)
                        else:
                            dist, normal = w["distance"] - y, (0.0, 1.0, 0.0)
            tilt = beam_geometry(q, d_body, normal) if normal is not None else 0.0
            out.append(ultrasonic_sample(self.ultrasonic, dist, tilt, self.rng_us, t))
        return out

    def _wall_contact(self, state, t_us, stats, annotations):
        """The frame stops dead at the wall. Each new touch is counted once,
        however long the vehicle then stays pressed against the wall."""
        x, y, z = state.position
        r = self.frame.radius
        vx, vy, vz = state.velocity
        touching = stats.setdefault("touching", set())
        for w in self.walls:
            side = w["side"]
            if side == "right" and y + w["distance"] < r and vy < 0:
                y, hit = r - w["distance"], -vy
            elif side == "left" and w["distance"] - y < r and vy > 0:
                y, hit = w["distance"] - r, vy
            else:
                if abs(self._wall_distance(y) - r) > 1e-6:
                    touching.discard(side)
                continue
            if side not in touching:
                touching.add(side)
                stats["wall_contacts"] += 1
                annotations.append({"t": t_us * 1e-6, "event": "wall_contact", "side": side,
                                    "speed": hit})
            state = replace(state, position=(x, y, z), velocity=(vx, 0.0, vz))
        return state

    def _wall_distance(self, y: float) -> float:
        d = math.inf
        for w in self.walls:
            d = min(d, y + w["distance"] if w["side"] == "right" else w["distance"] - y)
        return d

    # -- main loop -------------------------------------------------------------

    def run(self) -> tuple[RunLog, MetricsReport]:
        c = self.cfg
        env, frame = self.env, self.frame
        g = env.gravity
        mass = frame.mass
        drag = frame.rotor_drag
        T_us = round(c["duration"] * 1e6)
        dt_max = round(c["physics_dt"] * 1e6)
        ctrl_period = 1e6 / self.control_rate
        ping_period = 1e6 / self.ultrasonic.update_rate
        log_period = 1e6 / c["log_rate"]

        init = c["initial"]
        roll0, pitch0, yaw0 = (math.radians(a) for a in init["attitude_deg"])
        state = af.RigidState(tuple(map(float, init["position"])),
                              tuple(map(float, init["velocity"])),
                              af.quat_from_euler(roll0, pitch0, yaw0), (0.0, 0.0, 0.0))
        ground0 = self.terrain.height_at(state.position[0])
        if state.position[2] < ground0:
            state = replace(state, position=(state.position[0], state.position[1], ground0))
        p_hover = self.hover_power if init["airborne"] else 0.0
        powers = [p_hover] * 4
        commands = [p_hover] * 4
        # timers are written during a cycle and take effect with the next one
        staged = list(commands)
        forces = [af.thrust_ideal(env, self.disk, p) for p in powers]

        # after ground calibration the bias is known to the calibration residual
        b0 = max(c["sensors"]["gyro"]["calibration_residual"], 1e-4) ** 2
        est = EstimatorState(roll=roll0, pitch=pitch0, yaw=yaw0,
                             covariance=np.diag([1e-4, 1e-4, b0, b0]))
        att_state = AttitudeState()
        ph_state = PositionHoldState()
        h_state = RangeLoopState()
        w_state = RangeLoopState()
        gyro_model = self.gyro
        battery = self.battery
        ranges = [0.0] * 6
        ranges_valid = [True] * 6
        fresh_down = fresh_side = False
        side_idx = ULTRASONIC_NAMES.index(self.wall_cfg.side)
        down_idx = ULTRASONIC_NAMES.index("down")

        log = {k: [] for k in LOG_COLUMNS}
        annotations: list[dict] = []
        last = {"gyro": (0.0, 0.0, 0.0), "accel": (0.0, 0.0), "pilot": self.pilot.at(0.0),
                "sp": (0.0, 0.0), "throttle": 0.0, "hdelta": 0.0, "wall": 0.0,
                "dem": (0.0, 0.0, 0.0), "mode": self.mode, "gyro_valid": 1.0,
                "accel_valid": 1.0}
        stats = {"pings": 0, "down_zero_pings": 0, "zero_reading_violations": 0,
                 "zero_reading_ticks": 0, "clamped_cycles": 0, "impacts": 0,
                 "max_impact_speed": 0.0, "wall_contacts": 0, "control_cycles": 0, "energy_j": 0.0,
                 "inoperative_cycles": 0, "bursts": []}
        timer_faults = [(round(f["t"] * 1e6), f) for f in self.timer_faults]
        watchdog = c["scheduler"]["watchdog"]
        fault_state: dict[int, dict] = {}
        updates = sorted((u for u in self.pending_updates if u["status"] == "pending"),
                         key=lambda u: u["delivered_us"])
        for u in self.pending_updates:
            if u["status"] != "pending":
                annotations.append({"t": u["t_sent"], "event": "param_update",
                                    "path": u["path"], "value": u["value"],
                                    "status": u["status"], "reason": u["reason"]})

        t_us = 0
        k_ctrl = k_ping = k_log = 0
        next_ctrl = 0
        next_ping = 0
        next_log = 0
        last_ctrl_us = None
        last_batt_us = 0
        lin_accel_world = af.linear_acceleration(state, frame, env, forces)

        while True:
            t_evt = min(next_ctrl, next_ping, next_log)
            if t_evt > T_us:
                break
            # integrate the rigid body up to the next event
            while t_us < t_evt:
                step_us = min(dt_max, t_evt - t_us)
                dt = step_us * 1e-6
                for i in range(4):
                    powers[i] = af.lag_power(powers[i], commands[i], dt, self.tau, self.peak_power)
                    forces[i] = af.thrust_ideal(env, self.disk, powers[i])
                try:
                    state = af.rigid_body_step(state, frame, env, forces, dt)
                except af.SimulationFault as exc:
                    raise SimulationAborted((t_us + step_us) * 1e-6, str(exc)) from exc
                stats["energy_j"] += (sum(powers) + c["electronics_power"]) * dt
                t_us += step_us
                x, y, z = state.position
                gz = self.terrain.height_at(x)
                if z < gz:
                    vz = state.velocity[2]
                    if vz < -1.0:
                        stats["impacts"] += 1
                        annotations.append({"t": t_us * 1e-6, "event": "ground_impact",
                                            "speed": -vz})
                    stats["max_impact_speed"] = max(stats["max_impact_speed"], -vz)
                    _, _, yaw = af.quat_to_euler(state.orientation)
                    state = af.RigidState((x, y, gz), (0.0, 0.0, 0.0),
                                          af.quat_from_euler(0.0, 0.0, yaw), (0.0, 0.0, 0.0))
                if self.walls:
                    state = self._wall_contact(state, t_us, stats, annotations)
            t = t_us * 1e-6

            if t_us == next_ping:
                new = self._ranges(state, t)
                stats["pings"] += 1
                if new[down_idx] == 0.0:
                    stats["down_zero_pings"] += 1
                ranges = new
                fresh_down = fresh_side = True
                k_ping += 1
                next_ping = round(k_ping * ping_period)

            if t_us == next_ctrl:
                dt_c = (t_us - last_ctrl_us) * 1e-6 if last_ctrl_us is not None else 1.0 / self.control_rate
                last_ctrl_us = t_us
                stats["control_cycles"] += 1
                # parameter updates land on cycle boundaries only
                while updates and updates[0]["delivered_us"] <= t_us:
                    u = updates.pop(0)
                    self.cfg = set_path(self.cfg, u["path"], u["value"])
                    self._build_controllers()
                    u["status"] = "applied"
                    u["applied_us"] = t_us
                    annotations.append({"t": t, "event": "param_update", "path": u["path"],
                                        "value": u["value"], "status": "applied",
                                        "reason": None})

                # battery
                i_draw = (sum(powers) + c["electronics_power"]) / max(battery.terminal_voltage, 1.0)
                battery = af.battery_step(battery, i_draw, (t_us - last_batt_us) * 1e-6 or 1e-9)
                last_batt_us = t_us

                # sensors
                omega = state.angular_velocity
                rates, gyro_model = gyro_sample(gyro_model, omega, dt_c, self.rng_gyro)
                gyro = tuple(float(r) - o for r, o in zip(rates, self.gyro_offset))
                v_body = af.world_to_body(state.orientation, state.velocity)
                f_body = (-drag * v_body[0] / mass, -drag * v_body[1] / mass, sum(forces) / mass)
                vib = vibration_signal(self.vibration, powers, t)
                acc = accel_sample(self.accel, f_body, vib, self.rng_accel)
                frame_in = SensorFrame(t_us, gyro, (float(acc[0]), float(acc[1])),
                                       tuple(ranges), True, True, tuple(ranges_valid))
                sf = self.injector.apply(frame_in)
                ranges = list(sf.ranges)

                # estimator
                est = predict(est, sf.gyro, dt_c, self.tuning) if sf.gyro is not None else \
                    replace(est, fault=True)
                if self.fusion and sf.accel is not None and not est.fault:
                    est = update(est, sf.accel, self.tuning)

                pilot = self.pilot.at(t)
                pilot_throttle = pilot["throttle"] * self.hover_throttle
                sp_roll, sp_nick = pilot["roll"], pilot["nick"]
                angle_mode = self.mode == "angle"
                if angle_mode and self.ph_enabled:
                    lin = translational_accel(est, sf.accel, g) if (
                        self.fusion and sf.accel is not None) else None
                    ph_out, ph_state = position_hold(est, lin, self.ph_gains, ph_state, dt_c)
                    sp_roll += ph_out.roll
                    sp_nick += ph_out.nick
                wall_corr, w_state = wall_avoidance(self.wall_cfg, ranges[side_idx], w_state,
                                                    dt_c, fresh_side)
                fresh_side = False
                sp_roll += wall_corr
                demand, att_state = attitude_control(
                    (sp_roll, sp_nick, pilot["yaw"]), sf.gyro,
                    est if angle_mode else None, self.att_gains, att_state, dt_c)
                down = ranges[down_idx]
                throttle, h_state = height_control(self.height_cfg, down, pilot_throttle,
                                                   h_state, dt_c, fresh_down)
                fresh_down = False
                if self.height_cfg.active and down == 0.0:
                    stats["zero_reading_ticks"] += 1
                    if throttle != pilot_throttle:
                        stats["zero_reading_violations"] += 1

                commands = self._timer_faults(staged, t_us, timer_faults, fault_state,
                                              watchdog, annotations)
                if demand.ok:
                    mixed = af.mix(throttle, demand.nick, demand.roll, demand.yaw, self.max_power)
                    staged = list(mixed.powers)
                    stats["clamped_cycles"] += mixed.clamped
                else:
                    stats["inoperative_cycles"] += 1
                if battery.exhausted:
                    staged = [0.0] * 4
                last.update(gyro=sf.gyro or (math.nan,) * 3,
                            accel=sf.accel or (math.nan,) * 2, pilot=pilot,
                            sp=(sp_roll, sp_nick), throttle=throttle,
                            hdelta=throttle - pilot_throttle, wall=wall_corr,
                            dem=(demand.roll, demand.nick, demand.yaw), mode=demand.mode,
                            gyro_valid=float(sf.gyro_valid), accel_valid=float(sf.accel_valid))
                k_ctrl += 1
                next_ctrl = round(k_ctrl * ctrl_period)

            if t_us == next_log:
                self._log_row(log, t, state, ranges, side_idx, down_idx, est, last, powers,
                              battery)
                k_log += 1
                next_log = round(k_log * log_period)

        runlog = RunLog({k: np.asarray(v, dtype=float) for k, v in log.items()}, annotations)
        stats["battery"] = battery
        stats["jitter"] = self._jitter_analysis()
        stats["telemetry"] = self._downlink(runlog)
        stats["updates"] = self.pending_updates
        metrics = compute_metrics(runlog, self.cfg, stats)
        return runlog, metrics

    def _timer_faults(self, commands, t_us, timer_faults, fault_state, watchdog, annotations):
        """Lost/delayed output timers make a regulator read full throttle."""
        if not timer_faults:
            return commands
        commands = list(commands)
        period_us = round(1e6 / self.control_rate)
        for i, (at_us, f) in enumerate(timer_faults):
            if t_us < at_us:
                continue
            ch = f.get("channel", 0)
            st = fault_state.setdefault(i, {"since": t_us, "last_valid": commands[ch],
                                            "cleared": None})
            if st["since"] == t_us:
                annotations.append({"t": t_us * 1e-6, "event": "timer_fault",
                                    "kind": f["timer"], "channel": ch})
            if f["timer"] == "delayed" and t_us - st["since"] >= period_us:
                continue
            if watchdog["enabled"]:
                clear_at = sch.watchdog_clear_time(st["since"], watchdog["window_us"])
                if t_us >= clear_at:
                    if st["cleared"] is None:
                        st["cleared"] = t_us
                        annotations.append({"t": t_us * 1e-6, "event": "watchdog_clear",
                                            "channel": ch})
                    commands[ch] = st["last_valid"]
                    continue
            commands[ch] = self.max_power
        return commands

    def _log_row(self, log, t, state, ranges, side_idx, down_idx, est, last, powers, battery):
        x, y, z = state.position
        roll, pitch, yaw = af.quat_to_euler(state.orientation)
        p, q, r = state.angular_velocity
        gx, gy, gz = last["gyro"]
        ax, ay = last["accel"]
        pil = last["pilot"]
        row = (
            t, x, y, z, *state.velocity, roll, pitch, yaw, p, q, r, gx, gy, gz, ax, ay,
            ranges[down_idx], ranges[side_idx], est.roll, est.pitch, est.yaw,
            est.bias[0], est.bias[1],
            pil["throttle"] * self.hover_throttle, pil["nick"], pil["roll"], pil["yaw"],
            last["sp"][0], last["sp"][1], last["throttle"], last["hdelta"], last["wall"],
            *last["dem"], *powers, battery.terminal_voltage, battery.charge_remaining,
            self.terrain.height_at(x), self._wall_distance(y), float(est.rejected),
            last["gyro_valid"], last["accel_valid"], float(MODE_CODES[last["mode"]]),
        )
        for k, v in zip(LOG_COLUMNS, row):
            log[k].append(v)

    def _jitter_analysis(self) -> sch.JitterReport:
        c = self.cfg["scheduler"]
        window = round(c["analysis_window_s"] * 1e6)
        w, _ = sch.PpmMapping().to_width(self.hover_throttle)
        events = sch.frame_events(self.control_rate, window,
                                  list(c["pipeline_us"].items()), output_widths=(w,) * 4,
                                  input_frame_rate=c["input_frame_rate"])
        return sch.simulate_contention(events, self.isr_model)

    def _downlink(self, runlog: RunLog) -> dict:
        tc = self.cfg["telemetry"]
        period = 1.0 / tc["rate_hz"]
        duration = self.cfg["duration"]
        frames = [(round(k * period * 1e6), tc["frame_bytes"])
                  for k in range(int(duration / period) + 1)]
        res = link_transmit(self.link, frames, self.rng_link_down)
        return {"offered": len(frames), "delivered": res.count("delivered"),
                "lost": res.count("lost"), "overflow": res.count("overflow"),
                "max_bytes_per_s": res.max_window_bytes()}


def run_scenario(cfg: dict | str) -> tuple[RunLog, MetricsReport]:
    """Validate ``cfg`` (dict or path) and run it to completion."""
    return Simulation(load_scenario(cfg)).run()


# -- metrics -------------------------------------------------------------------

def reversals(x: np.ndarray, hysteresis: float) -> int:
    """Direction changes of ``x`` that move at least ``hysteresis`` away
    from the previous turning point."""
    count = 0
    direction = 0
    extreme = float(x[0]) if len(x) else 0.0
    for v in map(float, x):
        if direction == 0:
            if abs(v - extreme) >= hysteresis:
                direction = 1 if v > extreme else -1
                extreme = v
        elif direction * (v - extreme) > 0:
            extreme = v
        elif abs(v - extreme) >= hysteresis:
            count += 1
            direction = -direction
            extreme = v
    return count


def _p2p(a: np.ndarray) -> float:
    return float(a.max() - a.min()) if a.size else 0.0


def compute_metrics(log: RunLog, cfg: dict, stats: dict) -> MetricsReport:
    mc = cfg["metrics"]
    t = log["t"]
    ev = log.window(mc.get("eval_start", 0.0))
    m: dict[str, Any] = {}
    e_roll = log["roll"] - log["pilot_roll"]
    e_pitch = log["pitch"] - log["pilot_nick"]
    if cfg["control"]["attitude"]["mode"] == "rate":
        e_roll, e_pitch = log["roll"], log["pitch"]
    m["rms_attitude_error"] = float(np.sqrt(np.mean(e_roll[ev] ** 2 + e_pitch[ev] ** 2)))
    m["max_tilt"] = float(np.max(np.hypot(log["roll"][ev], log["pitch"][ev])))
    x0, y0 = log["x"][ev][0], log["y"][ev][0]
    horiz = np.hypot(log["x"][ev] - x0, log["y"][ev] - y0)
    m["drift_distance"] = float(horiz[-1])
    m["max_horizontal_excursion"] = float(horiz.max())
    agl = log["z"] - log["ground"]
    m["max_position_error"] = float(np.max(np.sqrt(
        (log["x"][ev] - x0) ** 2 + (log["y"][ev] - y0) ** 2 + (log["z"][ev] - log["z"][ev][0]) ** 2)))

    us = log["us_down"]
    valid = ev & (us > 0)
    m["ultrasonic_zero_samples"] = int(np.sum(ev & (us == 0)))
    m["dropout_count"] = stats["down_zero_pings"]
    m["pings"] = stats["pings"]
    if np.any(valid):
        target = cfg["control"]["height"]["target"]
        m["mean_measured_height"] = float(np.mean(us[valid]))
        m["max_height_error"] = float(np.max(np.abs(us[valid] - target)))
        m["mean_height_error"] = float(np.mean(np.abs(us[valid] - target)))
    last10 = log.window(t[-1] - 10.0)
    m["height_p2p_last10"] = _p2p(agl[last10])
    m["zero_reading_violations"] = stats["zero_reading_violations"]
    m["zero_reading_ticks"] = stats["zero_reading_ticks"]

    if "dip_reference" in mc and "dip_window" in mc:
        ref = log.window(*mc["dip_reference"]) & (us > 0)
        dip = log.window(*mc["dip_window"]) & (us > 0)
        if np.any(ref) and np.any(dip):
            m["ultrasonic_dip"] = float(np.median(us[ref]) - np.median(us[dip]))
            m["true_altitude_change"] = float(np.median(log["z"][dip]) - np.median(log["z"][ref]))

    bursts = cfg["sensors"]["ultrasonic"]["scripted_dropouts"]
    if bursts:
        exc = 0.0
        for b0, b1 in bursts:
            w = log.window(b0, b1)
            if np.any(w):
                z_b = agl[w]
                exc = max(exc, float(np.max(np.abs(z_b - z_b[0]))))
        m["burst_altitude_excursion"] = exc
        in_burst = np.zeros_like(t, dtype=bool)
        for b0, b1 in bursts:
            in_burst |= (t >= b0 + 0.1) & (t < b1)
        m["burst_throttle_deviation"] = float(np.max(np.abs(
            log["throttle"][in_burst] - log["pilot_throttle"][in_burst]))) if np.any(in_burst) else 0.0

    if cfg["walls"]:
        wd = log["wall_dist"]
        m["min_obstacle_distance"] = float(wd.min())
        m["wall_contacts"] = stats["wall_contacts"]
        m["contact"] = bool(wd.min() < cfg["airframe"]["diameter"] / 2 + 1e-9)
        if "wall_window" in mc:
            ww = log.window(*mc["wall_window"])
            m["wall_band_min"] = float(wd[ww].min())
            m["wall_band_max"] = float(wd[ww].max())
        if "oscillation_window" in mc:
            ow = log.window(*mc["oscillation_window"])
            err = wd[ow] - cfg["control"]["wall"]["hold"]
            m["wall_hold_crossings"] = int(np.sum(np.diff(np.sign(err)) != 0))
            m["wall_reversals"] = reversals(wd[ow], 0.05)
            m["wall_oscillation_p2p"] = _p2p(wd[ow])

    if "drift_split" in mc:
        ts = mc["drift_split"]
        t_end = t[-1]
        t0 = mc.get("eval_start", 0.0)

        def rate(a, b):
            i, j = int(np.searchsorted(t, a)), min(int(np.searchsorted(t, b)), len(t) - 1)
            return float(np.hypot(log["x"][j] - log["x"][i], log["y"][j] - log["y"][i]) / (b - a))
        m["drift_rate_pre"] = rate(t0, ts)
        m["drift_rate_post"] = rate(ts, t_end)
        m["drift_rate_ratio"] = m["drift_rate_post"] / max(m["drift_rate_pre"], 1e-9)

    if "rms_windows" in mc:
        for name, (a, b) in mc["rms_windows"].items():
            w = log.window(a, b)
            m[f"rms_attitude_error_{name}"] = float(np.sqrt(np.mean(e_roll[w] ** 2 + e_pitch[w] ** 2)))

    jit: sch.JitterReport = stats["jitter"]
    m["deadline_misses"] = jit.deadline_misses
    m["max_edge_jitter_us"] = jit.max_jitter_us
    m["ground_impacts"] = stats["impacts"]
    m["max_impact_speed"] = stats["max_impact_speed"]
    m["inoperative_cycles"] = stats["inoperative_cycles"]
    m["clamped_cycles"] = stats["clamped_cycles"]
    m["control_cycles"] = stats["control_cycles"]
    m["estimator_rejections"] = int(log["est_rejected"][-1])
    batt = stats["battery"]
    m["battery_used_mah"] = batt.capacity - batt.charge_remaining
    m["deep_discharge"] = batt.deep_discharge
    # electronics always draw, so the denominator stays positive
    mean_power = max(float(stats["energy_j"] / t[-1]) if t[-1] > 0 else 0.0,
                     cfg["electronics_power"])
    m["mean_power_w"] = mean_power
    m["endurance_estimate_min"] = af.battery_energy_wh(batt) * 60.0 / mean_power
    tel = stats["telemetry"]
    m["telemetry_delivered"] = tel["delivered"]
    m["telemetry_offered"] = tel["offered"]
    m["telemetry_max_bytes_per_s"] = tel["max_bytes_per_s"]
    m["param_updates_applied"] = sum(u["status"] == "applied" for u in stats["updates"])
    m["param_updates_rejected"] = sum(u["status"] == "rejected" for u in stats["updates"])

    checks = {}
    for name, th in cfg["thresholds"].items():
        value = m.get(name)
        ok = value is not None and not (isinstance(value, float) and math.isnan(value))
        if ok and "min" in th:
            ok = value >= th["min"]
        if ok and "max" in th:
            ok = value <= th["max"]
        checks[name] = {**th, "value": value, "pass": bool(ok)}
    return MetricsReport(m, checks)
