"""Flight control stack: per-axis PID attitude regulation, drift-damping
position hold, ultrasonic height hold and single-side wall avoidance.

Demands are dimensionless fractions of the maximum motor power, the units
``airframe.mix`` expects. Every range-driven controller treats a 0 reading
as "no echo" and contributes exactly nothing for that sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

from .estimation import EstimatorState


def _clamp(x: float, limit: float) -> float:
    return -limit if x < -limit else limit if x > limit else x


@dataclass(frozen=True)
class PidGains:
    kp: float = 0.0
    ki: float = 0.0
    kd: float = 0.0
    integral_clamp: float = 1.0
    output_clamp: float = 1.0
    derivative: str = "rate"  # "rate": -measured rate, "error": de/dt

    def __post_init__(self):
        if min(self.kp, self.ki, self.kd) < 0:
            raise ValueError("PID gains must be non-negative")
        if self.integral_clamp <= 0 or self.output_clamp <= 0:
            raise ValueError("PID clamps must be positive")
        if self.derivative not in ("rate", "error"):
            raise ValueError("derivative must be 'rate' or 'error'")


@dataclass(frozen=True)
class PidState:
    integral: float = 0.0
    prev_error: float | None = None
    last_output: float = 0.0


def pid_step(gains: PidGains, state: PidState, error: float,
             rate_measurement: float | None, dt: float) -> tuple[float, PidState]:
    """One PID update.

    The integral accumulates ``error * dt`` before the output is formed. While
    the output saturates in the direction of the error the integral is held
    (conditional integration anti-windup).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if gains.derivative == "rate":
        deriv = -(rate_measurement or 0.0)
    else:
        deriv = 0.0 if state.prev_error is None else (error - state.prev_error) / dt
    integral = _clamp(state.integral + error * dt, gains.integral_clamp)
    u = gains.kp * error + gains.ki * integral + gains.kd * deriv
    if abs(u) > gains.output_clamp and u * error > 0:
        integral = state.integral
        u = gains.kp * error + gains.ki * integral + gains.kd * deriv
    u = _clamp(u, gains.output_clamp)
    return u, PidState(integral, error, u)


# -- attitude -----------------------------------------------------------------

@dataclass(frozen=True)
class AttitudeGains:
    """``angle`` and ``rate`` are shared by nick and roll."""

    angle: PidGains = PidGains(kp=0.15, ki=0.02, kd=0.025, integral_clamp=0.5, output_clamp=0.15)
    rate: PidGains = PidGains(kp=0.011, ki=0.0, kd=0.0, integral_clamp=0.5, output_clamp=0.15,
                              derivative="error")
    yaw: PidGains = PidGains(kp=0.1, ki=0.02, kd=0.0, integral_clamp=0.5, output_clamp=0.1,
                             derivative="error")


@dataclass(frozen=True)
class AttitudeState:
    roll: PidState = PidState()
    nick: PidState = PidState()
    yaw: PidState = PidState()


@dataclass(frozen=True)
class AttitudeDemand:
    roll: float
    nick: float
    yaw: float
    mode: str  # "angle" | "rate" | "inoperative"

    @property
    def ok(self) -> bool:
        return self.mode != "inoperative"


def attitude_control(setpoints: Sequence[float], gyro: Sequence[float] | None,
                     estimate: EstimatorState | None, gains: AttitudeGains,
                     state: AttitudeState, dt: float) -> tuple[AttitudeDemand, AttitudeState]:
    """``setpoints`` is (roll, nick, yaw_rate). Roll and nick setpoints are
    angles in angle mode (estimate given) and rates in rate-damping mode.
    Yaw is always rate damped."""
    if gyro is None:
        return AttitudeDemand(0.0, 0.0, 0.0, "inoperative"), state
    p, q, r = gyro[0], gyro[1], gyro[2]
    sp_roll, sp_nick, sp_yaw = setpoints
    if estimate is not None and not estimate.fault:
        mode = "angle"
        roll_u, roll_s = pid_step(gains.angle, state.roll, sp_roll - estimate.roll, p, dt)
        nick_u, nick_s = pid_step(gains.angle, state.nick, sp_nick - estimate.pitch, q, dt)
    else:
        mode = "rate"
        roll_u, roll_s = pid_step(gains.rate, state.roll, sp_roll - p, None, dt)
        nick_u, nick_s = pid_step(gains.rate, state.nick, sp_nick - q, None, dt)
    yaw_u, yaw_s = pid_step(gains.yaw, state.yaw, sp_yaw - r, None, dt)
    return AttitudeDemand(roll_u, nick_u, yaw_u, mode), AttitudeState(roll_s, nick_s, yaw_s)


# -- position hold -----------------------------------------------------------

@dataclass(frozen=True)
class PositionHoldGains:
    kp: float = 0.0
    ki: float = 0.35  # integrated tilt acts as a velocity estimate
    ka: float = 0.005  # rad per m/s^2 of translational acceleration
    integral_clamp: float = 0.5
    output_clamp: float = 0.1  # rad of angle setpoint


@dataclass(frozen=True)
class PositionHoldState:
    integral_roll: float = 0.0
    integral_pitch: float = 0.0


@dataclass(frozen=True)
class PositionHoldOutput:
    nick: float
    roll: float
    advisory: str | None = None


def position_hold(estimate: EstimatorState | None, lin_accel: Sequence[float] | None,
                  gains: PositionHoldGains, state: PositionHoldState,
                  dt: float) -> tuple[PositionHoldOutput, PositionHoldState]:
    """Angle-setpoint corrections (rad) that lean against estimated tilt, its
    integral and the translational acceleration.

    Positive roll accelerates toward -y and positive pitch toward +x, hence
    the sign pattern below.
    """
    if estimate is None or estimate.fault:
        return PositionHoldOutput(0.0, 0.0, "estimator unavailable"), state
    ax, ay = (0.0, 0.0) if lin_accel is None else (lin_accel[0], lin_accel[1])
    ir = _clamp(state.integral_roll + estimate.roll * dt, gains.integral_clamp)
    ip = _clamp(state.integral_pitch + estimate.pitch * dt, gains.integral_clamp)
    roll = -gains.kp * estimate.roll - gains.ki * ir + gains.ka * ay
    nick = -gains.kp * estimate.pitch - gains.ki * ip - gains.ka * ax
    out = PositionHoldOutput(_clamp(nick, gains.output_clamp), _clamp(roll, gains.output_clamp))
    return out, PositionHoldState(ir, ip)


# -- ultrasonic PD loops -----------------------------------------------------

@dataclass(frozen=True)
class HeightControlConfig:
    target: float = 1.0
    kp: float = 0.05
    kd: float = 0.05
    limit: float = 0.03  # max throttle adjustment around the pilot throttle
    active: bool = True
    derivative_filter: float = 0.5  # weight of the newest difference quotient

    def __post_init__(self):
        if self.limit <= 0:
            raise ValueError("height adjustment limit must be positive")


@dataclass(frozen=True)
class RangeLoopState:
    """Shared state of the height and wall PD loops."""

    prev_reading: float | None = None
    elapsed: float = 0.0
    rate: float = 0.0
    contribution: float = 0.0


def _range_rate(state: RangeLoopState, reading: float, dt: float, fresh: bool,
                alpha: float) -> RangeLoopState:
    elapsed = state.elapsed + dt
    if not fresh:
        return replace(state, elapsed=elapsed)
    if state.prev_reading is None:
        rate = 0.0
    else:
        rate = alpha * (reading - state.prev_reading) / elapsed + (1 - alpha) * state.rate
    return RangeLoopState(prev_reading=reading, elapsed=0.0, rate=rate,
                          contribution=state.contribution)


def height_control(config: HeightControlConfig, reading: float, pilot_throttle: float,
                   state: RangeLoopState, dt: float,
                   fresh: bool = True) -> tuple[float, RangeLoopState]:
    """PD height hold around the pilot throttle.

    A zero reading switches the loop off for that sample and forgets the
    derivative history, so the output is exactly the pilot throttle.
    ``fresh`` marks the first call after a new ping; between pings the last
    contribution is held.
    """
    if not config.active or reading == 0.0:
        return pilot_throttle, RangeLoopState()
    state = _range_rate(state, reading, dt, fresh, config.derivative_filter)
    if fresh:
        u = config.kp * (config.target - reading) - config.kd * state.rate
        state = replace(state, contribution=_clamp(u, config.limit))
    return pilot_throttle + state.contribution, state


@dataclass(frozen=True)
class WallAvoidConfig:
    hold: float = 1.0
    kp: float = 0.1  # rad per m
    kd: float = 0.15  # rad per m/s
    emergency_distance: float = 0.6
    emergency_multiplier: float = 1.0
    limit: float = 0.1  # rad
    side: str = "right"
    active: bool = True
    derivative_filter: float = 0.6

    def __post_init__(self):
        if self.emergency_multiplier < 1:
            raise ValueError("emergency multiplier must be >= 1")
        if self.side not in ("left", "right"):
            raise ValueError("side must be 'left' or 'right'")


def wall_avoidance(config: WallAvoidConfig, reading: float, state: RangeLoopState,
                   dt: float, fresh: bool = True) -> tuple[float, RangeLoopState]:
    """Roll-angle correction (rad) holding ``config.hold`` from a side wall.
    Below the emergency distance the gains and the output limit are all
    multiplied by the emergency factor."""
    if not config.active or reading == 0.0:
        return 0.0, RangeLoopState()
    state = _range_rate(state, reading, dt, fresh, config.derivative_filter)
    if fresh:
        gain = config.emergency_multiplier if reading < config.emergency_distance else 1.0
        u = gain * (config.kp * (reading - config.hold) + config.kd * state.rate)
        # a right-side wall is approached by rolling positive
        sign = 1.0 if config.side == "right" else -1.0
        state = replace(state, contribution=_clamp(sign * u, gain * config.limit))
    return state.contribution, state


@dataclass(frozen=True)
class ControlCommand:
    throttle: float
    nick: float
    roll: float
    yaw: float
    motor_powers: tuple[float, float, float, float]
    clamped: bool = False
    sources: dict = field(default_factory=dict)
