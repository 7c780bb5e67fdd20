import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dozersim.geometry import Pose, wrap_angle
from dozersim.noise import NoiseConfig, corrupt_aiding, corrupt_ic, corrupt_imu, rollout_streams
from dozersim.trajectory import ImuIncrements

DEG = math.pi / 180.0


def _inc(dt=0.01):
    return ImuIncrements(np.array([0.001, -0.002, 0.003]), np.array([0.01, 0.02, -0.098]), dt)


def test_zero_config_is_identity():
    cfg = NoiseConfig()
    assert cfg.is_zero()
    rng = np.random.default_rng(0)
    inc = _inc()
    out = corrupt_imu(inc, cfg, rng)
    np.testing.assert_array_equal(out.q_t, inc.q_t)
    np.testing.assert_array_equal(out.q_v, inc.q_v)
    assert out.dt == inc.dt
    truth = Pose([1.0, 2.0, 0.0], [0.1, -0.2, 1.3])
    p, v = corrupt_ic(truth, [0.3, 0.0, 0.0], cfg)
    np.testing.assert_array_equal(p.p, truth.p)
    np.testing.assert_array_equal(p.att, truth.att)
    np.testing.assert_array_equal(v, [0.3, 0.0, 0.0])
    a = corrupt_aiding(truth, cfg, rng)
    np.testing.assert_array_equal(a.p, truth.p)
    np.testing.assert_array_equal(a.att, truth.att)


def test_constant_accel_bias_shift():
    cfg = NoiseConfig(b_c=[0.1, 0.0, 0.0])
    inc = _inc(0.01)
    out = corrupt_imu(inc, cfg, np.random.default_rng(1))
    np.testing.assert_allclose(out.q_v - inc.q_v, [0.001, 0.0, 0.0], atol=1e-15)
    np.testing.assert_array_equal(out.q_t, inc.q_t)


def test_accel_random_walk_moments():
    a_rw, dt, n = 0.02, 0.01, 100_000
    cfg = NoiseConfig(a_rw=[a_rw, a_rw, a_rw])
    rng = np.random.default_rng(2)
    inc = ImuIncrements(np.zeros(3), np.zeros(3), dt)
    draws = np.array([corrupt_imu(inc, cfg, rng).q_v for _ in range(n)])
    want = a_rw * math.sqrt(dt)
    np.testing.assert_allclose(draws.std(axis=0), want, rtol=0.03)
    assert np.all(np.abs(draws.mean(axis=0)) < 4 * want / math.sqrt(n))


def test_gyro_random_walk_and_bias():
    g_rw, d_c, dt, n = 0.01, 0.002, 0.01, 100_000
    cfg = NoiseConfig(g_rw=[g_rw] * 3, d_c=[d_c] * 3)
    rng = np.random.default_rng(3)
    inc = ImuIncrements(np.zeros(3), np.zeros(3), dt)
    draws = np.array([corrupt_imu(inc, cfg, rng).q_t for _ in range(n)])
    np.testing.assert_allclose(draws.std(axis=0), g_rw * math.sqrt(dt), rtol=0.03)
    np.testing.assert_allclose(draws.mean(axis=0), d_c * dt, atol=4 * g_rw * math.sqrt(dt / n))


def test_stream_alignment_independent_of_config():
    # six draws per call whatever the magnitudes
    r1, r2 = np.random.default_rng(5), np.random.default_rng(5)
    corrupt_imu(_inc(), NoiseConfig(), r1)
    corrupt_imu(_inc(), NoiseConfig(a_rw=[1, 1, 1]), r2)
    assert r1.standard_normal() == r2.standard_normal()
    corrupt_aiding(Pose(), NoiseConfig(), r1)
    corrupt_aiding(Pose(), NoiseConfig(dp_err=[1, 1, 1]), r2)
    assert r1.standard_normal() == r2.standard_normal()


def test_determinism_and_independent_streams():
    a_imu, a_aid = rollout_streams(7)
    b_imu, b_aid = rollout_streams(7)
    np.testing.assert_array_equal(a_imu.standard_normal(10), b_imu.standard_normal(10))
    np.testing.assert_array_equal(a_aid.standard_normal(10), b_aid.standard_normal(10))
    c_imu, c_aid = rollout_streams(7)
    assert not np.array_equal(c_imu.standard_normal(10), c_aid.standard_normal(10))


def test_ic_small_yaw():
    eps = 1e-3
    p, _ = corrupt_ic(Pose(), np.zeros(3), NoiseConfig(dpsi_ic=[0.0, 0.0, eps]))
    assert abs(p.att[2] - eps) < 1e-12
    assert abs(p.att[0]) < 1e-12 and abs(p.att[1]) < 1e-12


def test_ic_preset_configuration():
    cfg = NoiseConfig.from_file_units({"dp_ic": [5, 5, 5], "dv_ic": [1, 1, 1], "dpsi_ic": [4, 4, 5]})
    truth = Pose.planar(1.0, 1.0, 0.0)
    p, v = corrupt_ic(truth, np.zeros(3), cfg)
    np.testing.assert_allclose(p.p - truth.p, [0.05, 0.05, 0.05], atol=1e-15)
    np.testing.assert_allclose(v, [0.01, 0.01, 0.01], atol=1e-15)
    # on a level pose the composed attitude equals the error angles
    np.testing.assert_allclose(p.att, np.radians([4, 4, 5]), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(-math.pi, math.pi), st.floats(-0.3, 0.3))
def test_ic_yaw_error_adds_on_level_pose(r, p, y, e):
    truth = Pose([0, 0, 0], [0.0, 0.0, y])
    out, _ = corrupt_ic(truth, np.zeros(3), NoiseConfig(dpsi_ic=[0.0, 0.0, e]))
    assert abs(wrap_angle(out.att[2] - y - e)) < 1e-9


def test_aiding_moments_sensor_fusion_level():
    cfg = NoiseConfig.from_file_units({"dp_err": [5, 5, 5], "dpsi_err": [1, 1, 5]})
    np.testing.assert_allclose(cfg.dp_err, 0.05)
    np.testing.assert_allclose(cfg.dpsi_err, np.radians([1, 1, 5]))
    rng = np.random.default_rng(11)
    truth = Pose.planar(1.0, 1.0, 0.0)
    n = 100_000
    dp = np.empty((n, 3))
    datt = np.empty((n, 3))
    for k in range(n):
        m = corrupt_aiding(truth, cfg, rng)
        dp[k] = m.p - truth.p
        datt[k] = m.att
    np.testing.assert_allclose(dp.std(axis=0), 0.05, rtol=0.03)
    # at 1 and 5 deg the composed angles stay close to the drawn ones
    np.testing.assert_allclose(datt.std(axis=0), cfg.dpsi_err, rtol=0.03)


def test_aiding_extreme_level_units():
    cfg = NoiseConfig.from_file_units({"dp_err": [8, 8, 8], "dpsi_err": [1, 1, 10]})
    np.testing.assert_allclose(cfg.dp_err, [0.08, 0.08, 0.08])
    np.testing.assert_allclose(cfg.dpsi_err, [DEG, DEG, 10 * DEG])


def test_aiding_fixed_mode_and_literal_transpose():
    truth = Pose.planar(1.0, 2.0, 0.3)
    fixed = NoiseConfig(dp_err=[0.01, 0.02, 0.03], aiding_mode="fixed")
    m = corrupt_aiding(truth, fixed, np.random.default_rng(0))
    np.testing.assert_allclose(m.p - truth.p, [0.01, 0.02, 0.03], atol=1e-15)
    lit = NoiseConfig(literal_transpose=True)
    m = corrupt_aiding(truth, lit, np.random.default_rng(0))
    assert abs(m.att[2] + 0.3) < 1e-12  # transpose inverts the heading


def test_negative_std_rejected():
    with pytest.raises(ValueError):
        NoiseConfig(dp_err=[-0.1, 0, 0])
    with pytest.raises(ValueError):
        NoiseConfig(aiding_mode="uniform")


def test_file_unit_round_trip():
    d = {"b_c": [1, 2, 3], "d_c": [0.01, 0.02, 0.03], "dpsi_err": [1, 1, 5]}
    cfg = NoiseConfig.from_file_units(d)
    np.testing.assert_allclose(cfg.b_c, [0.01, 0.02, 0.03])
    np.testing.assert_allclose(cfg.d_c, np.radians([0.01, 0.02, 0.03]))
    back = cfg.to_file_units()
    for k, v in d.items():
        assert back[k] == [float(x) for x in v]
