import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mavsim import airframe as af

ENV = af.Environment()
DISK = af.PropellerDisk()


def thrust_oracle(rho, area, power, eta):
    # log-space evaluation, independent of the library's power operator
    if power == 0:
        return 0.0
    return eta * math.exp((math.log(2.0) + math.log(rho) + math.log(area) + 2 * math.log(power)) / 3)


def test_thrust_matches_oracle_on_grid():
    rng = np.random.default_rng(0)
    for rho, area, power in zip(rng.uniform(0.9, 1.3, 100), rng.uniform(0.005, 0.2, 100),
                                rng.uniform(0.1, 300.0, 100)):
        env = af.Environment(air_density=float(rho))
        disk = af.PropellerDisk(disk_area=float(area), efficiency=1.0)
        got = af.thrust_ideal(env, disk, float(power))
        assert got == pytest.approx(thrust_oracle(rho, area, power, 1.0), rel=1e-12, abs=1e-12)


@given(st.floats(0.01, 500.0))
def test_doubling_power_scales_thrust_by_two_thirds_power(p):
    ratio = af.thrust_ideal(ENV, DISK, 2 * p) / af.thrust_ideal(ENV, DISK, p)
    assert ratio == pytest.approx(2 ** (2 / 3), rel=1e-12)


@given(st.floats(0.0, 500.0))
def test_power_for_thrust_inverts(p):
    f = af.thrust_ideal(ENV, DISK, p)
    assert af.power_for_thrust(ENV, DISK, f) == pytest.approx(p, rel=1e-9, abs=1e-9)


def test_negative_power_rejected():
    with pytest.raises(ValueError):
        af.thrust_ideal(ENV, DISK, -1.0)


def test_hover_power_near_energy_table():
    p = af.hover_power_per_motor(af.AirframeConfig(), ENV, DISK)
    assert 4 * p == pytest.approx(45.0, rel=0.05)


def test_motor_lag_matches_exponential():
    m = af.MotorState()
    dt, tau, cmd = 0.001, m.time_constant, 40.0
    for n in range(1, 200):
        m = af.motor_step(m, cmd, dt)
        assert m.shaft_power == pytest.approx(cmd * (1 - math.exp(-n * dt / tau)), rel=1e-12)


@given(st.floats(0, 400), st.floats(-50, 500), st.floats(1e-5, 0.005))
def test_lag_stays_between_power_and_clamped_command(p0, cmd, dt):
    peak = 300.0
    p0 = min(p0, peak)
    p = af.lag_power(p0, cmd, dt, 0.05, peak)
    c = min(max(cmd, 0.0), peak)
    assert min(p0, c) - 1e-9 <= p <= max(p0, c) + 1e-9


def test_free_fall_matches_semi_implicit_recurrence():
    cfg = af.AirframeConfig()
    s = af.RigidState(position=(0.0, 0.0, 10.0))
    dt, g = 0.001, ENV.gravity
    for _ in range(500):
        s = af.rigid_body_step(s, cfg, ENV, (0.0,) * 4, dt)
    n = 500
    assert s.velocity[2] == pytest.approx(-g * n * dt, rel=1e-12)
    assert s.position[2] == pytest.approx(10.0 - g * dt * dt * n * (n + 1) / 2, rel=1e-12)


def test_hover_forces_hold_state():
    cfg = af.AirframeConfig()
    f = cfg.mass * ENV.gravity / 4
    s = af.RigidState(position=(0.0, 0.0, 1.0))
    for _ in range(1000):
        s = af.rigid_body_step(s, cfg, ENV, (f,) * 4, 0.001)
    assert s.position == pytest.approx((0.0, 0.0, 1.0), abs=1e-9)


def test_pitch_torque_from_rear_excess():
    cfg = af.AirframeConfig()
    forces = (1.0, 1.5, 2.0, 1.5)
    mx, my, mz = af.body_moments(cfg, forces)
    assert mx == 0.0
    assert my == pytest.approx(cfg.arm_length * 1.0)
    s = af.rigid_body_step(af.RigidState(), cfg, ENV, forces, 0.001)
    assert s.angular_velocity[1] == pytest.approx(my / cfg.inertia[1] * 0.001)


def test_mixer_roll_sign_and_sum():
    res = af.mix(0.3, 0.0, 0.05, 0.0)
    front, left, rear, right = res.powers
    assert left > right and front == rear
    assert sum(res.powers) == pytest.approx(4 * 0.3 * 100.0)
    assert not res.clamped
    assert af.mix(0.99, 0.0, 0.05, 0.0).clamped


def test_rigid_step_rejects_large_dt():
    with pytest.raises(ValueError):
        af.rigid_body_step(af.RigidState(), af.AirframeConfig(), ENV, (0.0,) * 4, 0.01)


def test_battery_coulomb_counting_and_deep_discharge():
    b = af.BatteryState()
    for _ in range(36):
        b = af.battery_step(b, 10.0, 1.0)
    assert b.charge_remaining == pytest.approx(1250.0 - 100.0)
    while not b.exhausted:
        b = af.battery_step(b, 50.0, 1.0)
    assert b.deep_discharge


def test_power_budget_table():
    rep = af.power_budget()
    assert rep.total_w == pytest.approx(45.715, abs=1e-12)
    assert rep.endurance_min == pytest.approx(13.875 / 45.715 * 60, rel=1e-12)
    assert round(rep.endurance_min, 1) == 18.2
    assert "derived" in rep.note
    assert sum(rep.shares.values()) == pytest.approx(1.0)


def test_scaling_identity_and_trend():
    cfg = af.AirframeConfig()
    same = af.scaling_feasibility(cfg, cfg.diameter)
    assert same.thrust_margin_ratio == pytest.approx(1.0) and same.feasible
    big = af.scaling_feasibility(cfg, 4 * cfg.diameter)
    small = af.scaling_feasibility(cfg, cfg.diameter / 2)
    assert big.thrust_margin_ratio < 1.0 < small.thrust_margin_ratio


@given(st.floats(-1.5, 1.5), st.floats(-1.4, 1.4), st.floats(-3.1, 3.1))
def test_euler_quaternion_round_trip(r, p, y):
    out = af.quat_to_euler(af.quat_from_euler(r, p, y))
    assert out == pytest.approx((r, p, y), abs=1e-9)
