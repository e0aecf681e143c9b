import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mavsim import estimation as es

G = 9.81


def scalar_kalman(x, P, steps, tun):
    """Roll/bias filter written out element by element, pitch held at zero."""
    phi, b = x
    p11, p12, p22 = P
    out = []
    for gx, ay, dt in steps:
        # predict: phi' = phi + (gx - b) dt, b' = b
        phi = phi + (gx - b) * dt
        n11 = p11 - 2 * dt * p12 + dt * dt * p22 + tun.gyro_noise * dt
        n12 = p12 - dt * p22
        n22 = p22 + tun.bias_noise * dt
        p11, p12, p22 = n11, n12, n22
        # update with y = g sin(phi)
        h = G * math.cos(phi)
        s = h * h * p11 + tun.accel_noise
        k1, k2 = p11 * h / s, p12 * h / s
        nu = ay - G * math.sin(phi)
        phi, b = phi + k1 * nu, b + k2 * nu
        # Joseph form
        a11, a12, a21, a22 = 1 - k1 * h, 0.0, -k2 * h, 1.0
        q11 = a11 * a11 * p11 + 2 * a11 * a12 * p12 + a12 * a12 * p22
        q12 = a11 * a21 * p11 + (a11 * a22 + a12 * a21) * p12 + a12 * a22 * p22
        q22 = a21 * a21 * p11 + 2 * a21 * a22 * p12 + a22 * a22 * p22
        r = tun.accel_noise
        p11, p12, p22 = q11 + k1 * k1 * r, q12 + k1 * k2 * r, q22 + k2 * k2 * r
        out.append((phi, b, p11, p12, p22))
    return out


def test_filter_matches_one_axis_recurrence():
    tun = es.FilterTuning(gate=1e9)
    rng = np.random.default_rng(11)
    steps = [(float(0.02 + 0.01 * rng.standard_normal()),
              float(G * math.sin(0.05) + 0.3 * rng.standard_normal()), 1 / 300)
             for _ in range(2000)]
    P0 = np.diag([1e-4, 1e-4, 1e-6, 1e-6])
    est = es.EstimatorState(covariance=P0)
    ref = scalar_kalman((0.0, 0.0), (1e-4, 0.0, 1e-6), steps, tun)
    for (gx, ay, dt), (phi, b, p11, p12, p22) in zip(steps, ref):
        est = es.predict(est, (gx, 0.0, 0.0), dt, tun)
        est = es.update(est, (0.0, ay), tun)
        assert est.roll == pytest.approx(phi, abs=1e-9)
        assert est.bias[0] == pytest.approx(b, abs=1e-9)
        assert est.covariance[0, 0] == pytest.approx(p11, abs=1e-9)
        assert est.covariance[0, 2] == pytest.approx(p12, abs=1e-9)
        assert est.covariance[2, 2] == pytest.approx(p22, abs=1e-9)
        assert est.pitch == 0.0


def test_converges_to_static_tilt_and_bias():
    tun = es.FilterTuning(accel_noise=0.5)
    roll, pitch, bias = 0.1, -0.05, (0.01, -0.02)
    z = (-G * math.sin(pitch), G * math.sin(roll) * math.cos(pitch))
    est = es.EstimatorState(covariance=np.diag([0.1, 0.1, 1e-3, 1e-3]))
    for _ in range(20000):
        est = es.predict(est, (bias[0], bias[1], 0.0), 0.005, tun)
        est = es.update(est, z, tun)
    assert (est.roll, est.pitch) == pytest.approx((roll, pitch), abs=1e-3)
    assert est.bias == pytest.approx(bias, abs=1e-3)


def test_gate_rejects_spike_and_missing_reading_is_noop():
    tun = es.FilterTuning(accel_noise=0.01)
    est = es.EstimatorState(covariance=np.diag([1e-4, 1e-4, 1e-6, 1e-6]))
    est2 = es.update(est, (50.0, 50.0), tun)
    assert est2.rejected == 1 and est2.roll == est.roll
    assert es.update(est, None, tun) is est


def test_missing_gyro_flags_fault():
    assert es.predict(es.EstimatorState(), None, 0.01, es.FilterTuning()).fault


@given(st.lists(st.tuples(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(-3, 3),
                          st.floats(-4, 4)), min_size=1, max_size=40))
def test_covariance_stays_symmetric_positive(seq):
    tun = es.FilterTuning()
    est = es.EstimatorState()
    for p, q, ax, ay in seq:
        est = es.predict(est, (p, q, 0.0), 1 / 300, tun)
        est = es.update(est, (ax, ay), tun)
        c = est.covariance
        assert np.allclose(c, c.T)
        assert np.min(np.linalg.eigvalsh(c)) > -1e-12


@given(st.floats(-100, 100))
def test_wrap_angle_range(a):
    w = es.wrap_angle(a)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.sin(w), math.sin(a), abs_tol=1e-9)


def test_translational_accel_removes_gravity():
    est = es.EstimatorState(roll=0.1)
    lin = es.translational_accel(est, (0.0, G * math.sin(0.1) + 0.2))
    assert lin == pytest.approx((0.0, 0.2))
