"""Rigid-body airframe, propulsion, battery and energy analyses.

Body frame is x forward, y left, z up. Motors sit on the body axes (plus
configuration) in the order front, left, rear, right. The front/rear pair
spins clockwise seen from above, so its reaction torque yaws the body
counter-clockwise (+z).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

Vec3 = tuple[float, float, float]
Quat = tuple[float, float, float, float]

MOTOR_NAMES = ("front", "left", "rear", "right")
# +1: clockwise rotor (reaction torque +z), -1: counter-clockwise
MOTOR_SPIN = (1.0, -1.0, 1.0, -1.0)


class SimulationFault(RuntimeError):
    """Raised when the integrated state stops being finite."""


@dataclass(frozen=True)
class Environment:
    air_density: float = 1.225
    gravity: float = 9.81

    def __post_init__(self):
        if not (self.air_density > 0 and self.gravity > 0):
            raise ValueError("air_density and gravity must be positive")


@dataclass(frozen=True)
class PropellerDisk:
    disk_area: float = 0.05
    # thrust efficiency relative to the ideal actuator disk; 0.65 puts hover
    # at roughly the 45 W motor draw of the energy table for the default mass
    efficiency: float = 0.65

    def __post_init__(self):
        if self.disk_area <= 0:
            raise ValueError("disk_area must be positive")
        if not 0 < self.efficiency <= 1:
            raise ValueError("efficiency must be in (0, 1]")


@dataclass(frozen=True)
class MotorState:
    shaft_power: float = 0.0
    commanded_power: float = 0.0
    max_constant_power: float = 100.0
    time_constant: float = 0.05
    peak_factor: float = 3.0

    @property
    def peak_power(self) -> float:
        return self.max_constant_power * self.peak_factor


@dataclass(frozen=True)
class AirframeConfig:
    """Airframe geometry and mass properties.

    Default inertia comes from ``inertia_from_layout``: 45 g of motor and
    propeller at each 0.2 m arm tip plus a 0.47 kg hub of 5 cm radius.
    """

    mass: float = 0.65
    diameter: float = 0.48
    arm_length: float = 0.20
    inertia: Vec3 = (0.0039, 0.0039, 0.0078)
    motor_count: int = 4
    yaw_drag: float = 0.001
    # reaction torque per newton of rotor thrust
    torque_to_thrust: float = 0.016
    # rotor (induced) drag in the body x/y plane, N per m/s
    rotor_drag: float = 0.35

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if any(i <= 0 for i in self.inertia):
            raise ValueError("inertia components must be positive")
        if not math.isclose(self.inertia[0], self.inertia[1], rel_tol=1e-12):
            raise ValueError("Ixx must equal Iyy (symmetric airframe)")
        if self.motor_count != 4:
            raise ValueError("only the four-motor plus layout is modeled")

    @property
    def radius(self) -> float:
        return self.diameter / 2


def inertia_from_layout(tip_mass: float, arm_length: float, hub_mass: float,
                        hub_radius: float) -> Vec3:
    """Diagonal inertia of four tip point masses plus a thin hub disc."""
    i_tips_xy = 2 * tip_mass * arm_length ** 2
    i_tips_z = 4 * tip_mass * arm_length ** 2
    i_hub_xy = hub_mass * hub_radius ** 2 / 4
    i_hub_z = hub_mass * hub_radius ** 2 / 2
    return (i_tips_xy + i_hub_xy, i_tips_xy + i_hub_xy, i_tips_z + i_hub_z)


@dataclass(frozen=True)
class RigidState:
    position: Vec3 = (0.0, 0.0, 0.0)
    velocity: Vec3 = (0.0, 0.0, 0.0)
    orientation: Quat = (1.0, 0.0, 0.0, 0.0)  # w, x, y, z; body -> world
    angular_velocity: Vec3 = (0.0, 0.0, 0.0)  # body frame


@dataclass(frozen=True)
class BatteryState:
    cells: int = 3
    capacity: float = 1250.0  # mAh
    charge_remaining: float = 1250.0  # mAh
    nominal_voltage: float = 3.7  # per cell
    internal_resistance: float = 0.05  # pack, ohm
    terminal_voltage: float = 12.6
    cell_full: float = 4.2
    cell_empty: float = 3.3
    cell_floor: float = 3.0
    deep_discharge: bool = False
    exhausted: bool = False

    def open_circuit_voltage(self) -> float:
        frac = self.charge_remaining / self.capacity
        return self.cells * (self.cell_empty + (self.cell_full - self.cell_empty) * frac)


# -- quaternion helpers -------------------------------------------------------

def quat_multiply(a: Quat, b: Quat) -> Quat:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def quat_normalize(q: Quat) -> Quat:
    n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    return (q[0] / n, q[1] / n, q[2] / n, q[3] / n)


def quat_from_euler(roll: float, pitch: float, yaw: float) -> Quat:
    """ZYX (yaw, pitch, roll) Euler angles to a body->world quaternion."""
    cr, sr = math.cos(roll / 2), math.sin(roll / 2)
    cp, sp = math.cos(pitch / 2), math.sin(pitch / 2)
    cy, sy = math.cos(yaw / 2), math.sin(yaw / 2)
    return (
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    )


def quat_to_euler(q: Quat) -> Vec3:
    w, x, y, z = q
    roll = math.atan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y))
    s = max(-1.0, min(1.0, 2 * (w * y - z * x)))
    pitch = math.asin(s)
    yaw = math.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
    return roll, pitch, yaw


def rotation_matrix(q: Quat) -> tuple[Vec3, Vec3, Vec3]:
    """Row-major body->world rotation matrix."""
    w, x, y, z = q
    return (
        (1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)),
        (2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)),
        (2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)),
    )


def world_to_body(q: Quat, v: Vec3) -> Vec3:
    r = rotation_matrix(q)
    return (
        r[0][0] * v[0] + r[1][0] * v[1] + r[2][0] * v[2],
        r[0][1] * v[0] + r[1][1] * v[1] + r[2][1] * v[2],
        r[0][2] * v[0] + r[1][2] * v[1] + r[2][2] * v[2],
    )


def body_to_world(q: Quat, v: Vec3) -> Vec3:
    r = rotation_matrix(q)
    return (
        r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
        r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
        r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
    )


def tilt_angle(q: Quat) -> float:
    """Angle between body z and world z."""
    w, x, y, z = q
    c = 1 - 2 * (x * x + y * y)
    return math.acos(max(-1.0, min(1.0, c)))


# -- propulsion ---------------------------------------------------------------

def thrust_ideal(env: Environment, disk: PropellerDisk, power: float) -> float:
    """Actuator-disk thrust, F = eta * (2 rho A P^2)^(1/3)."""
    if power < 0:
        raise ValueError(f"shaft power must be non-negative, got {power}")
    return disk.efficiency * (2.0 * env.air_density * disk.disk_area * power * power) ** (1.0 / 3.0)


def power_for_thrust(env: Environment, disk: PropellerDisk, thrust: float) -> float:
    """Inverse of ``thrust_ideal``."""
    if thrust < 0:
        raise ValueError("thrust must be non-negative")
    ideal = thrust / disk.efficiency
    return math.sqrt(ideal ** 3 / (2.0 * env.air_density * disk.disk_area))


def motor_step(motor: MotorState, command_power: float, dt: float) -> MotorState:
    """First-order lag of shaft power toward the command (exact discretization)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    cmd = min(max(command_power, 0.0), motor.peak_power)
    p = lag_power(motor.shaft_power, cmd, dt, motor.time_constant, motor.peak_power)
    return replace(motor, shaft_power=p, commanded_power=cmd)


def lag_power(power: float, command: float, dt: float, tau: float, peak: float) -> float:
    cmd = min(max(command, 0.0), peak)
    p = power + (cmd - power) * (1.0 - math.exp(-dt / tau))
    return min(max(p, 0.0), peak)


@dataclass(frozen=True)
class MixResult:
    powers: tuple[float, float, float, float]
    clamped: bool


def mix(throttle: float, nick: float, roll: float, yaw: float,
        max_power: float = 100.0) -> MixResult:
    """Plus-configuration mixer from dimensionless demands to motor power.

    A positive nick demand pitches about +y (front down), positive roll rolls
    about +x (left side up), positive yaw turns counter-clockwise. Demands are
    fractions of ``max_power``.
    """
    raw = (
        throttle - nick + yaw,  # front
        throttle + roll - yaw,  # left
        throttle + nick + yaw,  # rear
        throttle - roll - yaw,  # right
    )
    out = []
    clamped = False
    for d in raw:
        p = d * max_power
        if p < 0.0:
            p, clamped = 0.0, True
        elif p > max_power:
            p, clamped = max_power, True
        out.append(p)
    return MixResult(tuple(out), clamped)


def body_moments(config: AirframeConfig, forces: Sequence[float]) -> Vec3:
    """Roll, pitch, yaw moments (body frame) from the four rotor thrusts."""
    f_front, f_left, f_rear, f_right = forces
    l = config.arm_length
    k = config.torque_to_thrust
    return (
        l * (f_left - f_right),
        l * (f_rear - f_front),
        k * (f_front + f_rear - f_left - f_right),
    )


def rigid_body_step(state: RigidState, config: AirframeConfig, env: Environment,
                    forces: Sequence[float], dt: float) -> RigidState:
    """Semi-implicit Euler step of the 6-DOF Newton-Euler equations."""
    if not 0 < dt <= 0.005 + 1e-12:
        raise ValueError(f"dt must be in (0, 5 ms], got {dt}")
    q = state.orientation
    p, qr, r = state.angular_velocity
    ixx, iyy, izz = config.inertia

    mx, my, mz = body_moments(config, forces)
    mz -= config.yaw_drag * r * abs(r)
    # Euler's equations, diagonal inertia
    dp = (mx - (izz - iyy) * qr * r) / ixx
    dq = (my - (ixx - izz) * p * r) / iyy
    dr = (mz - (iyy - ixx) * p * qr) / izz
    p += dp * dt
    qr += dq * dt
    r += dr * dt

    # orientation update with the new rate (exact rotation over dt)
    wn = math.sqrt(p * p + qr * qr + r * r)
    if wn > 0.0:
        half = 0.5 * wn * dt
        s = math.sin(half) / wn
        q = quat_multiply(q, (math.cos(half), p * s, qr * s, r * s))
    q = quat_normalize(q)

    vel = state.velocity
    v_body = world_to_body(state.orientation, vel)
    total = sum(forces)
    f_body = (-config.rotor_drag * v_body[0], -config.rotor_drag * v_body[1], total)
    fx, fy, fz = body_to_world(state.orientation, f_body)
    m = config.mass
    vx = vel[0] + fx / m * dt
    vy = vel[1] + fy / m * dt
    vz = vel[2] + (fz / m - env.gravity) * dt
    pos = state.position
    new = RigidState(
        position=(pos[0] + vx * dt, pos[1] + vy * dt, pos[2] + vz * dt),
        velocity=(vx, vy, vz),
        orientation=q,
        angular_velocity=(p, qr, r),
    )
    if not all(math.isfinite(c) for c in new.position + new.velocity + q + new.angular_velocity):
        raise SimulationFault(f"non-finite rigid state after step: {new}")
    return new


def linear_acceleration(state: RigidState, config: AirframeConfig, env: Environment,
                        forces: Sequence[float]) -> Vec3:
    """World-frame acceleration implied by the current forces (for sensors)."""
    v_body = world_to_body(state.orientation, state.velocity)
    f_body = (-config.rotor_drag * v_body[0], -config.rotor_drag * v_body[1], sum(forces))
    fx, fy, fz = body_to_world(state.orientation, f_body)
    m = config.mass
    return (fx / m, fy / m, fz / m - env.gravity)


def battery_step(batt: BatteryState, current_draw: float, dt: float) -> BatteryState:
    """Coulomb counting with an ohmic terminal-voltage sag."""
    if current_draw < 0:
        raise ValueError("current_draw must be non-negative")
    charge = batt.charge_remaining - current_draw * dt / 3.6  # A*s -> mAh
    exhausted = charge <= 0.0
    charge = max(charge, 0.0)
    nxt = replace(batt, charge_remaining=charge)
    v_oc = nxt.open_circuit_voltage()
    v_term = 0.0 if exhausted else max(v_oc - current_draw * batt.internal_resistance, 0.0)
    deep = batt.deep_discharge or exhausted or v_term / batt.cells < batt.cell_floor
    return replace(nxt, terminal_voltage=v_term, deep_discharge=deep, exhausted=exhausted)


def battery_energy_wh(batt: BatteryState) -> float:
    return batt.cells * batt.nominal_voltage * batt.capacity / 1000.0


# Measured power draw per component: name -> (W, weight share)
DEFAULT_COMPONENTS: dict[str, tuple[float, float]] = {
    "motors": (45.0, 0.26),
    "gyroscopes": (0.150, 0.04),
    "accelerometers": (0.005, 0.001),
    "ultrasonic sensors": (0.500, 0.05),
    "mainboards": (0.060, 0.05),
}


@dataclass(frozen=True)
class BudgetReport:
    total_w: float
    shares: dict[str, float]
    energy_wh: float
    endurance_min: float  # math.inf when nothing draws power
    note: str = ("endurance is derived as battery energy / total draw; "
                 "it is not a measured flight time")


def power_budget(components: Mapping[str, float] | None = None,
                 battery: BatteryState | None = None) -> BudgetReport:
    if components is None:
        components = {k: v[0] for k, v in DEFAULT_COMPONENTS.items()}
    if any(p < 0 for p in components.values()):
        raise ValueError("component powers must be non-negative")
    battery = battery or BatteryState()
    total = math.fsum(components.values())
    shares = {k: (p / total if total > 0 else 0.0) for k, p in components.items()}
    energy = battery_energy_wh(battery)
    endurance = math.inf if total == 0 else energy / total * 60.0
    return BudgetReport(total, shares, energy, endurance)


@dataclass(frozen=True)
class ScalingReport:
    linear_scale: float
    area_ratio: float
    available_thrust_ratio: float  # fixed shaft power
    mass_ratio: float
    required_thrust_ratio: float
    thrust_margin_ratio: float
    hover_power_ratio: float
    energy_ratio: float
    endurance_ratio: float
    feasible: bool  # available thrust at reference power still covers weight
    details: dict = field(default_factory=dict)


def scaling_feasibility(config: AirframeConfig, target_diameter: float,
                        env: Environment | None = None,
                        disk: PropellerDisk | None = None,
                        motor_power: float = 100.0) -> ScalingReport:
    """Scale the reference airframe to ``target_diameter`` using F ~ A^(1/3)
    at fixed power, m ~ A^(3/2) and F_required = g m.

    Battery energy is assumed to follow the mass (cubic in linear scale);
    hover power follows from inverting the actuator-disk law.
    """
    if target_diameter <= 0:
        raise ValueError("target diameter must be positive")
    env = env or Environment()
    disk = disk or PropellerDisk()
    s = target_diameter / config.diameter
    area = s * s
    avail = area ** (1.0 / 3.0)
    mass = area ** 1.5
    required = mass
    hover_power = required ** 1.5 / area ** 0.5
    energy = mass
    ref_required = env.gravity * config.mass
    ref_available = config.motor_count * thrust_ideal(env, disk, motor_power)
    return ScalingReport(
        linear_scale=s,
        area_ratio=area,
        available_thrust_ratio=avail,
        mass_ratio=mass,
        required_thrust_ratio=required,
        thrust_margin_ratio=avail / required,
        hover_power_ratio=hover_power,
        energy_ratio=energy,
        endurance_ratio=energy / hover_power,
        feasible=ref_available * avail >= ref_required * required,
        details={
            "reference_required_thrust_n": ref_required,
            "reference_available_thrust_n": ref_available,
            "target_required_thrust_n": ref_required * required,
            "target_available_thrust_n": ref_available * avail,
        },
    )


def hover_power_per_motor(config: AirframeConfig, env: Environment,
                          disk: PropellerDisk) -> float:
    return power_for_thrust(env, disk, config.mass * env.gravity / config.motor_count)
