"""Attitude and pose mathematics.

Conventions shared by every module:

* Navigation frame is NED (x forward/north, y right/east, z down).
* Euler angles follow the Z-Y-X (yaw, pitch, roll) sequence. As vectors
  they are stored in axis order ``[roll, pitch, yaw]`` so a small-angle
  vector is also a rotation vector about (x, y, z).
* ``e2d`` returns the navigation-to-body DCM, ``D_n^b``. Its transpose is
  the body-to-navigation matrix.
* Quaternions are ``[r, i, j, k]`` Hamilton quaternions describing the
  body-to-navigation rotation, canonicalised to ``r >= 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRotation, GimbalLock

GIMBAL_TOL = 1e-9


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class EulerAngles:
    psi: float  # yaw
    theta: float  # pitch
    phi: float  # roll

    @classmethod
    def from_vec(cls, v) -> "EulerAngles":
        return cls(psi=float(v[2]), theta=float(v[1]), phi=float(v[0]))

    @property
    def vec(self) -> np.ndarray:
        return np.array([self.phi, self.theta, self.psi])


@dataclass
class Pose:
    """Position (m, navigation frame) and attitude ``[roll, pitch, yaw]`` (rad)."""

    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    att: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(3)
        if isinstance(self.att, EulerAngles):
            self.att = self.att.vec
        self.att = np.asarray(self.att, dtype=float).reshape(3)

    @property
    def yaw(self) -> float:
        return float(self.att[2])

    @classmethod
    def planar(cls, x, y, yaw, z=0.0) -> "Pose":
        return cls(np.array([x, y, z]), np.array([0.0, 0.0, wrap_angle(yaw)]))

    def copy(self) -> "Pose":
        return Pose(self.p.copy(), self.att.copy())


def _as_vec(a) -> np.ndarray:
    if isinstance(a, EulerAngles):
        return a.vec
    return np.asarray(a, dtype=float)


def e2d(a) -> np.ndarray:
    """Euler angles ``[roll, pitch, yaw]`` -> navigation-to-body DCM."""
    phi, theta, psi = _as_vec(a)
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    return np.array([
        [cp * ct, sp * ct, -st],
        [cp * st * sf - sp * cf, sp * st * sf + cp * cf, ct * sf],
        [cp * st * cf + sp * sf, sp * st * cf - cp * sf, ct * cf],
    ])


def d2e(d) -> np.ndarray:
    """Navigation-to-body DCM -> Euler angles ``[roll, pitch, yaw]``.

    Raises GimbalLock when pitch is within numerical reach of +-90 deg.
    """
    d = np.asarray(d, dtype=float)
    if abs(d[0, 2]) >= 1.0 - GIMBAL_TOL:
        raise GimbalLock(f"pitch at +-90 deg (D[0,2]={d[0, 2]:.12f})")
    theta = math.atan2(-d[0, 2], math.hypot(d[0, 0], d[0, 1]))
    psi = math.atan2(d[0, 1], d[0, 0])
    phi = math.atan2(d[1, 2], d[2, 2])
    if psi == -math.pi:
        psi = math.pi
    if phi == -math.pi:
        phi = math.pi
    return np.array([phi, theta, psi])


def skew(v) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def orthonormalize(d) -> np.ndarray:
    """Nearest rotation matrix (symmetric orthogonalisation)."""
    u, _, vt = np.linalg.svd(d)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = u @ vt
    return r


# --- quaternions ---------------------------------------------------------


def canonical(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return -q if q[0] < 0 else q


def normalize(q) -> np.ndarray:
    n = math.sqrt(float(np.dot(q, q)))
    if n < 1e-12:
        raise DegenerateRotation(f"quaternion norm {n:.3e} cannot be normalised")
    return q / n


def conj(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def _hamilton(a, b) -> np.ndarray:
    ar, ax, ay, az = a
    br, bx, by, bz = b
    return np.array([
        ar * br - ax * bx - ay * by - az * bz,
        ar * bx + ax * br + ay * bz - az * by,
        ar * by - ax * bz + ay * br + az * bx,
        ar * bz + ax * by - ay * bx + az * br,
    ])


def quat_mul(a, b) -> np.ndarray:
    """Hamilton product, renormalised and canonicalised."""
    return canonical(normalize(_hamilton(a, b)))


def quat_to_dcm(q) -> np.ndarray:
    """Quaternion (body-to-nav rotation) -> navigation-to-body DCM."""
    r, x, y, z = normalize(np.asarray(q, dtype=float))
    c_bn = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - r * z), 2 * (x * z + r * y)],
        [2 * (x * y + r * z), 1 - 2 * (x * x + z * z), 2 * (y * z - r * x)],
        [2 * (x * z - r * y), 2 * (y * z + r * x), 1 - 2 * (x * x + y * y)],
    ])
    return c_bn.T


def dcm_to_quat(d) -> np.ndarray:
    """Navigation-to-body DCM -> quaternion (body-to-nav rotation)."""
    m = np.asarray(d, dtype=float).T
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(1.0 + tr)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return canonical(normalize(np.array(q)))


def euler_to_quat(a) -> np.ndarray:
    return dcm_to_quat(e2d(a))


def quat_to_euler(q) -> np.ndarray:
    return d2e(quat_to_dcm(q))


def interpolate_attitude(q1, q2, n_int: int, relative: bool = False) -> list[np.ndarray]:
    """Interpolate ``n_int`` attitudes starting at ``q1``.

    The default follows the increment-quaternion recipe literally:
    the increment is built from ``q1 (x) q2`` and its imaginary part is
    scaled by the step index before renormalising. Because of the
    normalisation, the ``1/n_int`` factor cancels and the last element is
    generally not ``q2``.

    ``relative=True`` builds the increment from ``conj(q1) (x) q2`` and scales
    the imaginary part by ``k / (n_int - 1)`` so the final element equals
    ``q2``.
    """
    if n_int < 2:
        raise ValueError("n_int must be >= 2")
    q1 = canonical(normalize(np.asarray(q1, dtype=float)))
    q2 = canonical(normalize(np.asarray(q2, dtype=float)))
    base = _hamilton(conj(q1), q2) if relative else _hamilton(q1, q2)
    q_inc = normalize(base)
    if relative:
        q_inc = canonical(q_inc)
        scale = 1.0 / (n_int - 1)
    else:
        q_inc = q_inc * (1.0 / n_int)
        scale = 1.0
    out = []
    for k in range(n_int):
        step = np.concatenate(([q_inc[0]], (k * scale) * q_inc[1:]))
        step = normalize(step)
        if k == 0:
            # zero imaginary part: identity increment (up to sign)
            out.append(q1.copy())
            continue
        out.append(canonical(normalize(_hamilton(q1, step))))
    return out
