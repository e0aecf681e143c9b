"""Sensor emulation: analog gyros, dual-axis accelerometer, SRF10-like
ultrasonic rangers, motor vibration, and fault injection.

Gyro and accelerometer loss is reported as ``None`` together with a false
validity flag. Only the ultrasonic rangers use an in-band 0, which is what
the real modules log when no echo comes back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .airframe import Quat, Vec3, rotation_matrix, world_to_body

ULTRASONIC_DIRECTIONS: dict[str, Vec3] = {
    "down": (0.0, 0.0, -1.0),
    "front": (1.0, 0.0, 0.0),
    "rear": (-1.0, 0.0, 0.0),
    "left": (0.0, 1.0, 0.0),
    "right": (0.0, -1.0, 0.0),
    "up": (0.0, 0.0, 1.0),
}
ULTRASONIC_NAMES = tuple(ULTRASONIC_DIRECTIONS)
SENSOR_NAMES = ("gyro", "accel", "ultrasonic")


class ConfigError(ValueError):
    """Invalid sensor or fault configuration."""


@dataclass(frozen=True)
class GyroModel:
    bias: Vec3 = (0.0, 0.0, 0.0)
    bias_walk: float = 0.0005  # rad/s/sqrt(s)
    noise_sigma: float = 0.005  # rad/s
    sample_rate: float = 300.0
    alive: bool = True

    def __post_init__(self):
        if self.noise_sigma < 0 or self.bias_walk < 0:
            raise ConfigError("gyro noise terms must be non-negative")
        if self.sample_rate <= 0:
            raise ConfigError("gyro sample rate must be positive")


@dataclass(frozen=True)
class AccelModel:
    noise_sigma: float = 0.05  # m/s^2
    vibration_gain: float = 1.0
    alive: bool = True

    def __post_init__(self):
        if self.noise_sigma < 0 or self.vibration_gain < 0:
            raise ConfigError("accel noise and vibration gain must be non-negative")


@dataclass(frozen=True)
class UltrasonicModel:
    update_rate: float = 15.0
    max_range: float = 6.0
    min_range: float = 0.06
    dropout_prob: float = 0.08
    half_beam_angle: float = math.radians(30.0)
    quantization: float = 0.01
    noise_sigma: float = 0.003
    alive: bool = True
    # scripted dropouts: (start, end) windows in seconds, inclusive start
    scripted_dropouts: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if not self.min_range < self.max_range:
            raise ConfigError("ultrasonic min_range must be below max_range")
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ConfigError("dropout probability must be in [0, 1]")
        if self.update_rate <= 0:
            raise ConfigError("ultrasonic update rate must be positive")


@dataclass(frozen=True)
class VibrationSource:
    """Per-motor sinusoidal vibration with power-dependent amplitude and
    frequency. ``phases`` is drawn once per run; ``directions`` are body-frame
    unit vectors along which each motor shakes the sensor board."""

    amplitude_per_watt: float = 0.05  # m/s^2 per W
    base_frequency: float = 40.0  # Hz at zero power
    frequency_per_watt: float = 8.0  # Hz per W
    phases: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    directions: tuple[Vec3, Vec3, Vec3, Vec3] = (
        (0.6, 0.6, 0.53),
        (-0.6, 0.6, 0.53),
        (-0.6, -0.6, 0.53),
        (0.6, -0.6, 0.53),
    )

    def __post_init__(self):
        if self.amplitude_per_watt < 0:
            raise ConfigError("vibration amplitudes must be non-negative")

    def amplitude(self, power: float) -> float:
        return self.amplitude_per_watt * max(power, 0.0)

    def frequency(self, power: float) -> float:
        return self.base_frequency + self.frequency_per_watt * max(power, 0.0)


@dataclass(frozen=True)
class SensorFrame:
    timestamp_us: int
    gyro: Vec3 | None
    accel: tuple[float, float] | None
    ranges: tuple[float, ...] = (0.0,) * 6
    gyro_valid: bool = True
    accel_valid: bool = True
    range_valid: tuple[bool, ...] = (True,) * 6


def gyro_sample(model: GyroModel, omega: Sequence[float], dt: float,
                rng: np.random.Generator) -> tuple[np.ndarray | None, GyroModel]:
    """Rate = truth + bias + white noise; the bias then random-walks.

    ``model.bias`` may carry a leading batch dimension, which is how the
    Monte-Carlo tests run many independent gyros at once.
    """
    if not model.alive:
        return None, model
    bias = np.asarray(model.bias, dtype=float)
    noise = rng.standard_normal(bias.shape) * model.noise_sigma
    rates = np.asarray(omega, dtype=float) + bias + noise
    walk = rng.standard_normal(bias.shape) * (model.bias_walk * math.sqrt(dt))
    new_bias = bias + walk
    if new_bias.ndim == 1:
        new_bias = tuple(float(b) for b in new_bias)
    return rates, replace(model, bias=new_bias)


def specific_force(orientation: Quat, accel_world: Vec3, gravity: float) -> Vec3:
    """Body-frame specific force (what an ideal accelerometer measures)."""
    return world_to_body(orientation, (accel_world[0], accel_world[1], accel_world[2] + gravity))


def accel_sample(model: AccelModel, specific_force_body: Sequence[float],
                 vibration: Sequence[float], rng: np.random.Generator) -> np.ndarray | None:
    """Two-axis (x, y) reading. Tilt and lateral acceleration are
    indistinguishable here by construction."""
    if not model.alive:
        return None
    noise = rng.standard_normal(2) * model.noise_sigma
    return np.array([
        specific_force_body[0] + model.vibration_gain * vibration[0] + noise[0],
        specific_force_body[1] + model.vibration_gain * vibration[1] + noise[1],
    ])


def in_scripted_dropout(model: UltrasonicModel, t: float | None) -> bool:
    if t is None:
        return False
    return any(t0 <= t < t1 for t0, t1 in model.scripted_dropouts)


def ultrasonic_sample(model: UltrasonicModel, distance: float, tilt: float,
                      rng: np.random.Generator, t: float | None = None) -> float:
    """One ping. ``distance`` is the perpendicular distance to the surface and
    ``tilt`` the angle between the beam axis and the surface normal.
    Returns 0.0 for any invisibility condition."""
    # draw unconditionally so the random stream does not depend on geometry
    u = rng.random()
    n = rng.standard_normal()
    if not model.alive:
        return 0.0
    if u < model.dropout_prob or in_scripted_dropout(model, t):
        return 0.0
    tilt = abs(tilt)
    if tilt > model.half_beam_angle or not 0.0 < distance < math.inf:
        return 0.0
    r = distance / math.cos(tilt) + model.noise_sigma * n
    if model.quantization > 0:
        r = round(r / model.quantization) * model.quantization
    if r < model.min_range or r > model.max_range:
        return 0.0
    return r


def beam_geometry(orientation: Quat, direction_body: Vec3, normal_world: Vec3) -> float:
    """Tilt between a body-mounted beam and the outward surface normal
    (``normal_world`` points from the vehicle toward the surface)."""
    r = rotation_matrix(orientation)
    d = direction_body
    beam = (
        r[0][0] * d[0] + r[0][1] * d[1] + r[0][2] * d[2],
        r[1][0] * d[0] + r[1][1] * d[1] + r[1][2] * d[2],
        r[2][0] * d[0] + r[2][1] * d[1] + r[2][2] * d[2],
    )
    c = beam[0] * normal_world[0] + beam[1] * normal_world[1] + beam[2] * normal_world[2]
    return math.acos(max(-1.0, min(1.0, c)))


def vibration_signal(source: VibrationSource, motor_powers: Sequence[float],
                     t: float) -> Vec3:
    ax = ay = az = 0.0
    for power, phase, d in zip(motor_powers, source.phases, source.directions):
        a = source.amplitude(power)
        if a == 0.0:
            continue
        s = a * math.sin(2.0 * math.pi * source.frequency(power) * t + phase)
        ax += s * d[0]
        ay += s * d[1]
        az += s * d[2]
    return ax, ay, az


@dataclass(frozen=True)
class FaultSpec:
    sensor: str
    t_start: float
    kind: str = "loss"  # loss | stuck
    index: int | None = None  # ultrasonic module; None means all

    def __post_init__(self):
        if self.sensor not in SENSOR_NAMES:
            raise ConfigError(f"unknown sensor {self.sensor!r}; expected one of {SENSOR_NAMES}")
        if self.kind not in ("loss", "stuck"):
            raise ConfigError(f"unknown fault kind {self.kind!r}")


@dataclass
class FaultInjector:
    """Applies a fault schedule frame by frame. Stuck faults freeze the first
    value seen at or after the fault time."""

    faults: Sequence[FaultSpec] = ()
    _frozen: dict = field(default_factory=dict)

    def apply(self, frame: SensorFrame) -> SensorFrame:
        t = frame.timestamp_us * 1e-6
        for i, f in enumerate(self.faults):
            if t + 1e-12 < f.t_start:
                continue
            frame = self._apply_one(i, f, frame)
        return frame

    def _apply_one(self, i: int, f: FaultSpec, frame: SensorFrame) -> SensorFrame:
        if f.sensor == "gyro":
            if f.kind == "loss":
                return replace(frame, gyro=None, gyro_valid=False)
            val = self._frozen.setdefault(i, frame.gyro)
            return replace(frame, gyro=val, gyro_valid=val is not None)
        if f.sensor == "accel":
            if f.kind == "loss":
                return replace(frame, accel=None, accel_valid=False)
            val = self._frozen.setdefault(i, frame.accel)
            return replace(frame, accel=val, accel_valid=val is not None)
        idx = range(len(frame.ranges)) if f.index is None else (f.index,)
        ranges = list(frame.ranges)
        valid = list(frame.range_valid)
        for k in idx:
            if f.kind == "loss":
                ranges[k] = 0.0
                valid[k] = False
            else:
                ranges[k] = self._frozen.setdefault((i, k), ranges[k])
        return replace(frame, ranges=tuple(ranges), range_valid=tuple(valid))


def inject_fault(frames: Iterable[SensorFrame],
                 faults: FaultSpec | Sequence[FaultSpec] | None) -> list[SensorFrame]:
    if faults is None:
        return list(frames)
    if isinstance(faults, FaultSpec):
        faults = [faults]
    inj = FaultInjector(list(faults))
    return [inj.apply(f) for f in frames]
