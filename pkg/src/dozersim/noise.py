"""Seeded error injection for IMU increments, initial conditions and aiding poses."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .geometry import Pose, d2e, e2d
from .trajectory import ImuIncrements

_DEG = math.pi / 180.0
_CM = 0.01


def _vec(default=(0.0, 0.0, 0.0)):
    return field(default_factory=lambda: np.array(default, dtype=float))


@dataclass
class NoiseConfig:
    """Error magnitudes in SI units.

    Angular vectors are in ``[roll, pitch, yaw]`` order. ``a_rw``/``g_rw``
    are per-sample densities: one increment receives ``rw * sqrt(dt) * w``.
    """

    b_c: np.ndarray = _vec()  # accel constant bias, m/s^2
    d_c: np.ndarray = _vec()  # gyro constant bias, rad/s
    a_rw: np.ndarray = _vec()  # accel random walk, m/s/sqrt(s)
    g_rw: np.ndarray = _vec()  # gyro random walk, rad/sqrt(s)
    dp_ic: np.ndarray = _vec()  # m
    dv_ic: np.ndarray = _vec()  # m/s
    dpsi_ic: np.ndarray = _vec()  # rad
    dp_err: np.ndarray = _vec()  # aiding position std, m
    dpsi_err: np.ndarray = _vec()  # aiding attitude std, rad
    aiding_mode: str = "gaussian"  # or "fixed"
    literal_transpose: bool = False

    VECTOR_FIELDS = ("b_c", "d_c", "a_rw", "g_rw", "dp_ic", "dv_ic", "dpsi_ic", "dp_err", "dpsi_err")
    # file units: cm, cm/s, deg
    FILE_UNITS = {
        "b_c": _CM, "d_c": _DEG, "a_rw": _CM, "g_rw": _DEG,
        "dp_ic": _CM, "dv_ic": _CM, "dpsi_ic": _DEG, "dp_err": _CM, "dpsi_err": _DEG,
    }

    def __post_init__(self):
        for name in self.VECTOR_FIELDS:
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape == ():
                v = np.full(3, float(v))
            setattr(self, name, v.reshape(3))
        if self.aiding_mode not in ("gaussian", "fixed"):
            raise ValueError(f"unknown aiding_mode {self.aiding_mode!r}")
        for name in ("a_rw", "g_rw", "dp_err", "dpsi_err"):
            if np.any(getattr(self, name) < 0) and self.aiding_mode == "gaussian":
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def from_file_units(cls, d: dict) -> "NoiseConfig":
        kw = {}
        for k, v in d.items():
            if k in cls.FILE_UNITS:
                kw[k] = np.asarray(v, dtype=float) * cls.FILE_UNITS[k]
            else:
                kw[k] = v
        return cls(**kw)

    def to_file_units(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in self.FILE_UNITS:
                out[f.name] = [float(f"{x:.12g}") for x in v / self.FILE_UNITS[f.name]]  # drop unit round-off
            else:
                out[f.name] = v
        return out

    def with_(self, **kw) -> "NoiseConfig":
        return replace(self, **kw)

    def is_zero(self) -> bool:
        return all(not np.any(getattr(self, n)) for n in self.VECTOR_FIELDS)


def rollout_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (imu, aiding) generators derived from one rollout seed."""
    imu_ss, aid_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(imu_ss), np.random.default_rng(aid_ss)


def corrupt_imu(inc: ImuIncrements, cfg: NoiseConfig, rng: np.random.Generator) -> ImuIncrements:
    # Six draws per increment (3 accel, then 3 gyro), always consumed so the
    # stream stays aligned across configurations sharing a seed.
    w = rng.standard_normal(6)
    dt = inc.dt
    sq = math.sqrt(dt)
    q_v = inc.q_v + cfg.b_c * dt + cfg.a_rw * sq * w[:3]
    q_t = inc.q_t + cfg.d_c * dt + cfg.g_rw * sq * w[3:]
    return ImuIncrements(q_t, q_v, dt)


def corrupt_ic(truth: Pose, v, cfg: NoiseConfig) -> tuple[Pose, np.ndarray]:
    p = truth.p + cfg.dp_ic
    v = np.asarray(v, dtype=float) + cfg.dv_ic
    if not np.any(cfg.dpsi_ic):
        return Pose(p, truth.att.copy()), v
    att = d2e(e2d(truth.att) @ e2d(cfg.dpsi_ic))
    return Pose(p, att), v


def corrupt_aiding(truth: Pose, cfg: NoiseConfig, rng: np.random.Generator) -> Pose:
    """Noisy aiding pose.

    The attitude error is composed on the right of the true DCM, the same
    way the initial attitude error is. ``literal_transpose`` applies the
    transpose of the true DCM instead, which inverts the attitude; it is
    kept only to reproduce that reading.
    """
    w = rng.standard_normal(6)
    if cfg.aiding_mode == "fixed":
        dp, dpsi = cfg.dp_err, cfg.dpsi_err
    else:
        dp, dpsi = cfg.dp_err * w[:3], cfg.dpsi_err * w[3:]
    p = truth.p + dp
    d_true = e2d(truth.att)
    if cfg.literal_transpose:
        d_true = d_true.T
    elif not np.any(dpsi):
        return Pose(p, truth.att.copy())
    return Pose(p, d2e(d_true @ e2d(dpsi)))
