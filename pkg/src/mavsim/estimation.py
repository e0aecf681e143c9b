"""Attitude Kalman filter fusing the gyro triad with the dual-axis accelerometer.

State is ``[roll, pitch, bias_x, bias_y]``. Only roll and pitch are
observable from gravity, so yaw is integrated open loop from the z gyro and
kept outside the covariance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.fmod(a + math.pi, 2 * math.pi)
    if w <= 0.0:
        w += 2 * math.pi
    return w - math.pi


@dataclass(frozen=True)
class FilterTuning:
    gyro_noise: float = 1e-4  # (rad/s)^2 / s, angle random walk density
    bias_noise: float = 1e-6  # (rad/s)^2 / s, bias random walk density
    accel_noise: float = 9.0  # (m/s^2)^2 per reading; covers vibration and translational accel
    gate: float = 3.0  # Mahalanobis distance
    # after this many consecutive gated readings the next one is let through,
    # otherwise a diverged estimate could lock itself out forever
    gate_reset: int = 300
    gravity: float = 9.81

    def __post_init__(self):
        if min(self.gyro_noise, self.bias_noise, self.accel_noise) <= 0:
            raise ValueError("filter noise terms must be positive")
        if self.gate <= 0:
            raise ValueError("gate must be positive")


@dataclass(frozen=True)
class EstimatorState:
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0
    bias: tuple[float, float] = (0.0, 0.0)
    covariance: np.ndarray = field(default_factory=lambda: np.diag([0.01, 0.01, 4e-4, 4e-4]))
    rejected: int = 0
    consecutive_rejected: int = 0
    updates: int = 0
    last_innovation: tuple[float, float] = (0.0, 0.0)
    last_mahalanobis: float = 0.0
    fault: bool = False

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.roll, self.pitch, self.bias[0], self.bias[1]])


def predict(est: EstimatorState, rates: Sequence[float] | None, dt: float,
            tuning: FilterTuning) -> EstimatorState:
    """Propagate angles with bias-corrected gyro rates (Euler kinematics) and
    grow the covariance with first-order discretized process noise."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if rates is None or not all(math.isfinite(r) for r in rates):
        return replace(est, fault=True)
    p = rates[0] - est.bias[0]
    q = rates[1] - est.bias[1]
    r = rates[2]
    phi, th = est.roll, est.pitch
    sphi, cphi = math.sin(phi), math.cos(phi)
    cth = math.cos(th)
    tth = math.tan(th)

    roll_dot = p + (q * sphi + r * cphi) * tth
    pitch_dot = q * cphi - r * sphi
    yaw_dot = (q * sphi + r * cphi) / cth

    sec2 = 1.0 / (cth * cth)
    a = np.array([
        [(q * cphi - r * sphi) * tth, (q * sphi + r * cphi) * sec2, -1.0, -sphi * tth],
        [-q * sphi - r * cphi, 0.0, 0.0, -cphi],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0],
    ])
    f = np.eye(4) + a * dt
    qn = np.diag([tuning.gyro_noise, tuning.gyro_noise, tuning.bias_noise, tuning.bias_noise]) * dt
    cov = f @ est.covariance @ f.T + qn
    cov = 0.5 * (cov + cov.T)
    return replace(
        est,
        roll=wrap_angle(phi + roll_dot * dt),
        pitch=wrap_angle(th + pitch_dot * dt),
        yaw=wrap_angle(est.yaw + yaw_dot * dt),
        covariance=cov,
        fault=False,
    )


def measurement_model(roll: float, pitch: float, g: float) -> tuple[np.ndarray, np.ndarray]:
    """Expected (x, y) specific force for a non-accelerating vehicle, and its
    Jacobian with respect to the state."""
    sphi, cphi = math.sin(roll), math.cos(roll)
    sth, cth = math.sin(pitch), math.cos(pitch)
    h = np.array([-g * sth, g * sphi * cth])
    jac = np.array([
        [0.0, -g * cth, 0.0, 0.0],
        [g * cphi * cth, -g * sphi * sth, 0.0, 0.0],
    ])
    return h, jac


def update(est: EstimatorState, accel: Sequence[float] | None,
           tuning: FilterTuning) -> EstimatorState:
    """EKF measurement update against the gravity-implied tilt, with a
    Mahalanobis gate for vibration spikes. A missing reading is a no-op."""
    if accel is None:
        return est
    z = np.asarray(accel, dtype=float)
    if not np.all(np.isfinite(z)):
        return replace(est, fault=True)
    h, jac = measurement_model(est.roll, est.pitch, tuning.gravity)
    nu = z - h
    cov = est.covariance
    s = jac @ cov @ jac.T + np.eye(2) * tuning.accel_noise
    s_inv = np.linalg.inv(s)
    d2 = float(nu @ s_inv @ nu)
    dist = math.sqrt(max(d2, 0.0))
    forced = est.consecutive_rejected >= tuning.gate_reset
    if dist > tuning.gate and not forced:
        return replace(
            est,
            rejected=est.rejected + 1,
            consecutive_rejected=est.consecutive_rejected + 1,
            last_innovation=(float(nu[0]), float(nu[1])),
            last_mahalanobis=dist,
        )
    k = cov @ jac.T @ s_inv
    x = est.vector + k @ nu
    ikh = np.eye(4) - k @ jac
    new_cov = ikh @ cov @ ikh.T + k @ k.T * tuning.accel_noise
    new_cov = 0.5 * (new_cov + new_cov.T)
    return replace(
        est,
        roll=wrap_angle(float(x[0])),
        pitch=wrap_angle(float(x[1])),
        bias=(float(x[2]), float(x[3])),
        covariance=new_cov,
        updates=est.updates + 1,
        consecutive_rejected=0,
        last_innovation=(float(nu[0]), float(nu[1])),
        last_mahalanobis=dist,
    )


def translational_accel(est: EstimatorState, accel: Sequence[float],
                        gravity: float = 9.81) -> tuple[float, float]:
    """Body x/y linear acceleration: the raw reading minus the gravity
    projection implied by the estimated tilt."""
    h, _ = measurement_model(est.roll, est.pitch, gravity)
    return float(accel[0] - h[0]), float(accel[1] - h[1])
