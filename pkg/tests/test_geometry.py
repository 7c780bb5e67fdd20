import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from dozersim.errors import GimbalLock
from dozersim.geometry import (
    EulerAngles,
    d2e,
    dcm_to_quat,
    e2d,
    euler_to_quat,
    interpolate_attitude,
    quat_mul,
    quat_to_dcm,
    quat_to_euler,
    wrap_angle,
)

angles = st.tuples(
    st.floats(-math.pi + 1e-6, math.pi),  # roll
    st.floats(-1.4, 1.4),  # pitch
    st.floats(-math.pi + 1e-6, math.pi),  # yaw
)


def random_quat(rng):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def test_e2d_identity():
    np.testing.assert_array_equal(e2d([0, 0, 0]), np.eye(3))


def test_e2d_yaw_90_hand_computed():
    # nav->body for a 90 deg heading: body x points along nav y.
    expected = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    np.testing.assert_allclose(e2d(EulerAngles(psi=math.pi / 2, theta=0, phi=0)), expected, atol=1e-15)


@given(angles)
def test_e2d_matches_zyx_sequence(a):
    roll, pitch, yaw = a
    c_bn = Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix()
    np.testing.assert_allclose(e2d(a), c_bn.T, atol=1e-12)


@given(angles)
def test_e2d_orthonormal_and_inverse(a):
    d = e2d(a)
    np.testing.assert_allclose(d.T @ d, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(d) - 1.0) < 1e-9
    np.testing.assert_allclose(d @ np.linalg.inv(d), np.eye(3), atol=1e-9)


@given(angles)
def test_round_trip(a):
    out = d2e(e2d(a))
    diff = wrap_angle(out - np.asarray(a))
    assert np.max(np.abs(diff)) < 1e-9
    assert np.linalg.norm(e2d(out) - e2d(a)) < 1e-9


def test_d2e_identity_and_known():
    np.testing.assert_array_equal(d2e(np.eye(3)), [0.0, 0.0, 0.0])
    np.testing.assert_allclose(d2e(e2d([-0.2, 0.1, 0.3])), [-0.2, 0.1, 0.3], atol=1e-9)


@pytest.mark.parametrize("pitch", [math.pi / 2, -math.pi / 2])
def test_d2e_gimbal_lock(pitch):
    with pytest.raises(GimbalLock):
        d2e(e2d([0.1, pitch, 0.2]))


def test_wrap_angle_half_open():
    assert wrap_angle(-math.pi) == math.pi
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    assert wrap_angle(0.5) == 0.5


def test_quat_identity_products():
    rng = np.random.default_rng(1)
    ident = np.array([1.0, 0, 0, 0])
    for _ in range(20):
        a = random_quat(rng)
        np.testing.assert_allclose(quat_mul(a, ident), a, atol=1e-15)
        np.testing.assert_allclose(quat_mul(ident, a), a, atol=1e-15)


def test_quat_mul_matches_dcm_composition():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        a, b = random_quat(rng), random_quat(rng)
        c_ab = quat_to_dcm(quat_mul(a, b)).T
        np.testing.assert_allclose(c_ab, quat_to_dcm(a).T @ quat_to_dcm(b).T, atol=1e-9)


def test_quat_mul_associative():
    rng = np.random.default_rng(3)
    for _ in range(200):
        a, b, c = (random_quat(rng) for _ in range(3))
        np.testing.assert_allclose(quat_mul(quat_mul(a, b), c), quat_mul(a, quat_mul(b, c)), atol=1e-12)


def test_quat_conversions_agree_with_scipy():
    rng = np.random.default_rng(4)
    for _ in range(100):
        q = random_quat(rng)
        c_bn = Rotation.from_quat([q[1], q[2], q[3], q[0]]).as_matrix()
        np.testing.assert_allclose(quat_to_dcm(q), c_bn.T, atol=1e-12)
        np.testing.assert_allclose(dcm_to_quat(quat_to_dcm(q)), q, atol=1e-12)


def test_interpolate_identity_pair():
    ident = np.array([1.0, 0, 0, 0])
    out = interpolate_attitude(ident, ident, 4)
    assert len(out) == 4
    for q in out:
        np.testing.assert_array_equal(q, ident)


@given(st.integers(0, 10_000), st.integers(2, 30), st.booleans())
@settings(max_examples=50)
def test_interpolate_first_element_and_unit_norm(seed, n, relative):
    rng = np.random.default_rng(seed)
    q1, q2 = random_quat(rng), random_quat(rng)
    out = interpolate_attitude(q1, q2, n, relative=relative)
    assert len(out) == n
    np.testing.assert_array_equal(out[0], q1 / np.linalg.norm(q1))
    for q in out:
        assert abs(np.linalg.norm(q) - 1.0) < 1e-12


def test_interpolate_literal_recipe_yaw_90():
    # Step-by-step transcription: q1 = identity so q1 (x) q2 = q2 =
    # [cos 45, 0, 0, sin 45]; scaling the imaginary part by k and
    # renormalising gives a yaw of 2 * atan(k * tan(45 deg)).
    q2 = euler_to_quat([0.0, 0.0, math.pi / 2])
    out = interpolate_attitude(np.array([1.0, 0, 0, 0]), q2, 3)
    yaws = [quat_to_euler(q)[2] for q in out]
    expected = [2 * math.atan(k * math.tan(math.pi / 4)) for k in range(3)]
    np.testing.assert_allclose(yaws, expected, atol=1e-12)
    # 0, 90, 126.87 deg: the literal recipe overshoots q2.
    assert yaws[2] > math.pi / 2


def test_interpolate_relative_hits_endpoint_monotone():
    q1 = euler_to_quat([0.0, 0.0, 0.3])
    q2 = euler_to_quat([0.0, 0.0, 1.2])
    out = interpolate_attitude(q1, q2, 11, relative=True)
    np.testing.assert_allclose(out[-1], q2, atol=1e-12)
    yaws = np.array([quat_to_euler(q)[2] for q in out])
    assert np.all(np.diff(yaws) > 0)
    assert yaws[0] == pytest.approx(0.3) and yaws[-1] == pytest.approx(1.2)
