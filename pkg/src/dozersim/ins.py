"""Strapdown inertial integration with bias-compensation feedback.

Earth rotation is neglected and all three updates use rectangular (Euler)
integration, which is what makes the clean-increment round trip exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Pose, d2e, e2d, orthonormalize
from .trajectory import G, ImuIncrements

REORTHO_EVERY = 100


@dataclass
class StrapdownState:
    d_nb: np.ndarray  # navigation -> body DCM
    v: np.ndarray
    p: np.ndarray
    t: float = 0.0
    b_hat: np.ndarray = field(default_factory=lambda: np.zeros(3))
    d_hat: np.ndarray = field(default_factory=lambda: np.zeros(3))
    steps: int = 0

    @property
    def att(self) -> np.ndarray:
        return d2e(self.d_nb)

    @property
    def pose(self) -> Pose:
        return Pose(self.p.copy(), self.att)


def init(ic_pose: Pose, ic_v, t: float = 0.0) -> StrapdownState:
    return StrapdownState(e2d(ic_pose.att), np.asarray(ic_v, dtype=float).copy(), ic_pose.p.copy(), t)


def strapdown_step(s: StrapdownState, inc: ImuIncrements, g: float = G) -> StrapdownState:
    dt = inc.dt
    q_t = inc.q_t - s.d_hat * dt
    q_v = inc.q_v - s.b_hat * dt
    d_nb = e2d(q_t) @ s.d_nb
    steps = s.steps + 1
    if steps % REORTHO_EVERY == 0:
        d_nb = orthonormalize(d_nb)
    v = s.v + d_nb.T @ q_v
    v[2] += g * dt
    p = s.p + v * dt
    return StrapdownState(d_nb, v, p, s.t + dt, s.b_hat, s.d_hat, steps)


def apply_correction(s: StrapdownState, dx) -> StrapdownState:
    """Feed a filter error estimate back into the navigation solution.

    ``dx`` is the 15-vector ``[dp, dpsi, dv, db, dd]`` (or anything with a
    ``vec`` attribute). Position, velocity and attitude errors are
    estimate-minus-truth and are removed; ``db`` is the uncompensated
    accelerometer bias and is added to the estimate; ``dd`` is the gyro
    bias estimate-minus-truth and is removed.
    """
    dx = np.asarray(getattr(dx, "vec", dx), dtype=float)
    if not np.any(dx):
        return s
    dp, dpsi, dv, db, dd = dx[0:3], dx[3:6], dx[6:9], dx[9:12], dx[12:15]
    d_nb = s.d_nb @ e2d(dpsi).T
    return replace(s, d_nb=d_nb, v=s.v - dv, p=s.p - dp, b_hat=s.b_hat + db, d_hat=s.d_hat - dd)


def dead_reckon(ic_pose: Pose, ic_v, incs, g: float = G, t0: float = 0.0) -> list[StrapdownState]:
    s = init(ic_pose, ic_v, t0)
    out = [s]
    for inc in incs:
        s = strapdown_step(s, inc, g)
        out.append(s)
    return out
