import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mavsim import sensors as sn
from mavsim.airframe import quat_from_euler


def test_bias_walk_variance_monte_carlo():
    n, steps, dt = 4000, 300, 0.01
    model = sn.GyroModel(bias=np.zeros((n, 3)), bias_walk=0.002, noise_sigma=0.0)
    rng = np.random.default_rng(3)
    for _ in range(steps):
        _, model = sn.gyro_sample(model, (0.0, 0.0, 0.0), dt, rng)
    var = np.var(np.asarray(model.bias))
    expected = 0.002 ** 2 * steps * dt
    # sample variance of 12000 normals: relative standard error ~1.3 %
    assert var == pytest.approx(expected, rel=0.06)


def test_gyro_reads_truth_plus_bias():
    m = sn.GyroModel(bias=(0.01, -0.02, 0.0), bias_walk=0.0, noise_sigma=0.0)
    rates, m2 = sn.gyro_sample(m, (0.1, 0.2, 0.3), 0.01, np.random.default_rng(0))
    assert rates == pytest.approx([0.11, 0.18, 0.3])
    assert m2.bias == m.bias


def test_dead_gyro_and_accel_return_none():
    rng = np.random.default_rng(0)
    assert sn.gyro_sample(sn.GyroModel(alive=False), (0, 0, 0), 0.01, rng)[0] is None
    assert sn.accel_sample(sn.AccelModel(alive=False), (0, 0, 9.81), (0, 0, 0), rng) is None


def test_specific_force_of_tilted_hover():
    q = quat_from_euler(0.1, 0.0, 0.0)
    f = sn.specific_force(q, (0.0, 0.0, 0.0), 9.81)
    assert f[1] == pytest.approx(9.81 * math.sin(0.1))


def test_vibration_spectrum_peak():
    src = sn.VibrationSource(phases=(0.3, 1.0, 2.0, 0.5))
    power = 11.0
    fs, n = 2000.0, 4000
    t = np.arange(n) / fs
    sig = np.array([sn.vibration_signal(src, (power,) * 4, ti)[2] for ti in t])
    spectrum = np.abs(np.fft.rfft(sig))
    freqs = np.fft.rfftfreq(n, 1 / fs)
    assert freqs[np.argmax(spectrum)] == pytest.approx(src.frequency(power), abs=fs / n)


def test_ultrasonic_dropout_rate():
    m = sn.UltrasonicModel(dropout_prob=0.2)
    rng = np.random.default_rng(1)
    r = np.array([sn.ultrasonic_sample(m, 1.0, 0.0, rng) for _ in range(5000)])
    assert np.mean(r == 0.0) == pytest.approx(0.2, abs=0.02)
    assert np.all(np.abs(r[r > 0] - 1.0) < 0.03)


@given(st.floats(0.1, 5.0), st.floats(0.0, 0.5))
def test_ultrasonic_quantized_or_zero(d, tilt):
    m = sn.UltrasonicModel(dropout_prob=0.0, noise_sigma=0.0)
    r = sn.ultrasonic_sample(m, d, tilt, np.random.default_rng(0))
    if tilt > m.half_beam_angle:
        assert r == 0.0
    elif r:
        assert r == pytest.approx(round(d / math.cos(tilt), 2), abs=1e-9)


@pytest.mark.parametrize("dist", [math.inf, 0.0, -1.0, 0.01, 9.0])
def test_out_of_range_reads_zero(dist):
    m = sn.UltrasonicModel(dropout_prob=0.0)
    assert sn.ultrasonic_sample(m, dist, 0.0, np.random.default_rng(0)) == 0.0


def test_scripted_dropout_window():
    m = sn.UltrasonicModel(dropout_prob=0.0, scripted_dropouts=((1.0, 1.5),))
    rng = np.random.default_rng(0)
    assert sn.ultrasonic_sample(m, 1.0, 0.0, rng, t=1.2) == 0.0
    assert sn.ultrasonic_sample(m, 1.0, 0.0, rng, t=1.5) > 0.0


def test_beam_geometry_down_sensor():
    q = quat_from_euler(0.2, 0.0, 0.0)
    tilt = sn.beam_geometry(q, (0.0, 0.0, -1.0), (0.0, 0.0, -1.0))
    assert tilt == pytest.approx(0.2)


def test_fault_injector_loss_and_stuck():
    frames = [sn.SensorFrame(k * 100_000, (0.1 * k, 0.0, 0.0), (0.01 * k, 0.0),
                             (1.0 + k,) * 6) for k in range(6)]
    out = sn.inject_fault(frames, [sn.FaultSpec("accel", 0.2),
                                   sn.FaultSpec("gyro", 0.3, "stuck"),
                                   sn.FaultSpec("ultrasonic", 0.4, index=2)])
    assert out[1].accel is not None and out[2].accel is None and not out[5].accel_valid
    assert out[5].gyro == out[3].gyro == frames[3].gyro
    assert out[4].ranges[2] == 0.0 and out[4].ranges[0] == frames[4].ranges[0]


def test_unknown_fault_rejected():
    with pytest.raises(sn.ConfigError):
        sn.FaultSpec("lidar", 1.0)
    with pytest.raises(sn.ConfigError):
        sn.UltrasonicModel(dropout_prob=1.5)
