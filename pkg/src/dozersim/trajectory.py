"""Ground-truth leg trajectories and clean IMU increments."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLeg, NonUniformSampling
from .geometry import Pose, d2e, e2d, euler_to_quat, interpolate_attitude, quat_to_euler

G = 9.80665


@dataclass
class TrajectorySample:
    t: float
    pose: Pose
    v: np.ndarray


@dataclass
class ImuIncrements:
    q_t: np.ndarray  # angular increment [roll, pitch, yaw] order, rad
    q_v: np.ndarray  # velocity increment, body frame, m/s
    dt: float


def generate_leg_trajectory(start: Pose, end: Pose, speed: float, rate: float = 100.0, *,
                            duration: float | None = None, turn_rate: float = math.pi / 2,
                            relative: bool = True, cell_size: float = 0.025,
                            t0: float = 0.0) -> list[TrajectorySample]:
    """Straight constant-speed leg from ``start`` towards ``end``.

    Samples are half-open: ``n = round(duration * rate)`` samples at
    ``t0 + k/rate``, so the sample at ``end`` belongs to the next leg.
    Rotation-only legs take ``duration`` if given, else ``angle / turn_rate``.
    """
    if rate < 1.0:
        raise ValueError("rate must be >= 1 Hz")
    if speed <= 0:
        raise ValueError("speed must be positive")
    delta = end.p - start.p
    dist = float(np.linalg.norm(delta))
    q1, q2 = euler_to_quat(start.att), euler_to_quat(end.att)
    angle = 2.0 * math.acos(min(1.0, abs(float(np.dot(q1, q2)))))
    if dist < cell_size and angle < 1e-12:
        raise DegenerateLeg(f"leg of {dist:.4f} m with no attitude change")
    if duration is None:
        duration = dist / speed if dist >= cell_size else angle / turn_rate
    dt = 1.0 / rate
    n = max(2, int(round(duration * rate)))
    if angle < 1e-12:
        atts = [start.att.copy() for _ in range(n)]
    else:
        atts = [quat_to_euler(q) for q in interpolate_attitude(q1, q2, n, relative=relative)]
    v = delta / (n * dt)
    out = []
    for k in range(n):
        p = start.p + v * (k * dt)
        out.append(TrajectorySample(t0 + k * dt, Pose(p, atts[k]), v.copy()))
    return out


def chain_legs(waypoints: list[Pose], speed: float, rate: float = 100.0, **kw) -> list[TrajectorySample]:
    """Concatenate legs through ``waypoints`` and close with the final pose."""
    traj: list[TrajectorySample] = []
    t0 = 0.0
    for a, b in zip(waypoints[:-1], waypoints[1:]):
        leg = generate_leg_trajectory(a, b, speed, rate, t0=t0, **kw)
        traj.extend(leg)
        t0 = leg[-1].t + 1.0 / rate
    traj.append(TrajectorySample(t0, waypoints[-1].copy(), traj[-1].v.copy()))
    return traj


class IncrementSynthesizer:
    """Streaming form of the increment-generation loop.

    Keeps the previous attitude DCM and velocity so increments can be
    produced one true sample at a time (the closed-loop environment uses
    this directly).
    """

    def __init__(self, p0, att0, v0, dt: float, g: float = G):
        self.p = np.asarray(p0, dtype=float).copy()
        self.d = e2d(att0)
        self.v = np.asarray(v0, dtype=float).copy()
        self.dt = dt
        self.g = g

    def step(self, p, att) -> ImuIncrements:
        p = np.asarray(p, dtype=float)
        d = e2d(att)
        v = (p - self.p) * (1.0 / self.dt)
        q_t = d2e(d @ self.d.T)
        dv_b = d @ (v - self.v)
        q_v = dv_b - d @ np.array([0.0, 0.0, self.g * self.dt])
        self.p, self.d, self.v = p.copy(), d, v
        return ImuIncrements(q_t, q_v, self.dt)


def check_uniform(traj: list[TrajectorySample], tol: float = 1e-9) -> float:
    t = np.array([s.t for s in traj])
    if len(t) < 2:
        raise ValueError("need at least two samples")
    steps = np.diff(t)
    dt = float(steps[0])
    if dt <= 0 or np.max(np.abs(steps - dt)) > tol:
        raise NonUniformSampling(f"dt varies by {np.max(np.abs(steps - dt)):.3e} s")
    return dt


def generate_imu_increments(traj: list[TrajectorySample], g: float = G) -> list[ImuIncrements]:
    """Clean body-frame increments from a uniformly sampled trajectory.

    Output has ``len(traj) - 1`` entries; entry ``k-1`` takes the platform
    from sample ``k-1`` to ``k``. The velocity before the first step is the
    velocity stored on sample 0.
    """
    dt = check_uniform(traj)
    synth = IncrementSynthesizer(traj[0].pose.p, traj[0].pose.att, traj[0].v, dt, g)
    return [synth.step(s.pose.p, s.pose.att) for s in traj[1:]]


def write_trajectory_csv(traj: list[TrajectorySample], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "z", "psi", "theta", "phi", "vx", "vy", "vz"])
        for s in traj:
            roll, pitch, yaw = s.pose.att
            w.writerow([repr(float(s.t)), *(repr(float(x)) for x in s.pose.p),
                        repr(float(yaw)), repr(float(pitch)), repr(float(roll)),
                        *(repr(float(x)) for x in s.v)])


def read_trajectory_csv(path) -> list[TrajectorySample]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            f = {k: float(v) for k, v in row.items()}
            pose = Pose([f["x"], f["y"], f["z"]], [f["phi"], f["theta"], f["psi"]])
            out.append(TrajectorySample(f["t"], pose, np.array([f["vx"], f["vy"], f["vz"]])))
    return out
