"""Error-state EKF fusing strapdown estimates with low-rate aiding poses.

Error state (15): ``[dp, dpsi, dv, db, dd]``.

* ``dp``, ``dv``: estimate minus truth (navigation frame).
* ``dpsi``: small rotation ``E`` with ``D_ins = D_true @ F(dpsi)``.
* ``db``: accelerometer bias not yet compensated (truth minus estimate).
* ``dd``: gyro bias estimate minus truth.

With these signs the accumulated body-to-navigation rotation enters the
velocity row as ``+sum(D)`` and the attitude row as ``-sum(D)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import chi2

from . import ins
from .errors import NumericalDivergence, SingularInnovation, StreamMisaligned
from .geometry import Pose, d2e, e2d, skew
from .noise import NoiseConfig, corrupt_aiding
from .trajectory import G, ImuIncrements

I3 = np.eye(3)
Z3 = np.zeros((3, 3))
POS, ATT, VEL, ACC_B, GYR_B = slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12), slice(12, 15)


@dataclass
class ErrorState:
    vec: np.ndarray = field(default_factory=lambda: np.zeros(15))

    @property
    def dp(self):
        return self.vec[POS]

    @property
    def dpsi(self):
        return self.vec[ATT]

    @property
    def dv(self):
        return self.vec[VEL]

    @property
    def db_c(self):
        return self.vec[ACC_B]

    @property
    def dd_c(self):
        return self.vec[GYR_B]


@dataclass
class MeasurementResidual:
    dz: np.ndarray  # [dp_m (3), dpsi_m (3)]


@dataclass
class FilterConfig:
    """Filter tuning. ``noise`` is the error model the filter assumes.

    ``pos_vel_coupling`` keeps the ``I/dt_m`` block that feeds position
    error into velocity error; switch it off for the conventional model.
    """

    noise: NoiseConfig = field(default_factory=NoiseConfig)
    pos_vel_coupling: bool = True
    min_std: float = 1e-6
    bias_q: float = 1e-12
    acc_bias_prior: np.ndarray | None = None  # m/s^2, default |b_c|
    gyro_bias_prior: np.ndarray | None = None  # rad/s, default |d_c|
    g: float = G


@dataclass
class FilterModel:
    A: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    dt_m: float = 1.0
    sigma_D: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    A_s: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))


def build_system_matrix(sigma_D, A_s, dt_m: float, pos_vel_coupling: bool = True) -> np.ndarray:
    if dt_m <= 0:
        raise ValueError("dt_m must be positive")
    sigma_D = np.asarray(sigma_D, dtype=float)
    pv = I3 / dt_m if pos_vel_coupling else Z3
    return np.block([
        [I3, Z3, I3 * dt_m, Z3, Z3],
        [Z3, I3, Z3, Z3, -sigma_D],
        [pv, np.asarray(A_s, dtype=float), I3, sigma_D, Z3],
        [Z3, Z3, Z3, I3, Z3],
        [Z3, Z3, Z3, Z3, I3],
    ])


def measurement_matrix() -> np.ndarray:
    # Position residual is measurement minus estimate, attitude residual is
    # estimate minus measurement; both map onto estimate-minus-truth states.
    H = np.zeros((6, 15))
    H[0:3, POS] = -I3
    H[3:6, ATT] = I3
    return H


def process_noise(noise: NoiseConfig, dt_m: float, bias_q: float = 1e-12) -> np.ndarray:
    a2 = noise.a_rw ** 2
    g2 = noise.g_rw ** 2
    Q = np.zeros((15, 15))
    Q[POS, POS] = np.diag(a2 * dt_m ** 3 / 3.0)
    Q[POS, VEL] = np.diag(a2 * dt_m ** 2 / 2.0)
    Q[VEL, POS] = Q[POS, VEL]
    Q[VEL, VEL] = np.diag(a2 * dt_m)
    Q[ATT, ATT] = np.diag(g2 * dt_m)
    Q[ACC_B, ACC_B] = bias_q * I3
    Q[GYR_B, GYR_B] = bias_q * I3
    return Q


def measurement_noise(noise: NoiseConfig, min_std: float = 1e-6) -> np.ndarray:
    std = np.concatenate([np.maximum(noise.dp_err, min_std), np.maximum(noise.dpsi_err, min_std)])
    return np.diag(std ** 2)


def initial_covariance(cfg: FilterConfig) -> np.ndarray:
    n = cfg.noise
    ab = np.abs(n.b_c) if cfg.acc_bias_prior is None else np.asarray(cfg.acc_bias_prior, dtype=float)
    gb = np.abs(n.d_c) if cfg.gyro_bias_prior is None else np.asarray(cfg.gyro_bias_prior, dtype=float)
    std = np.concatenate([np.abs(n.dp_ic), np.abs(n.dpsi_ic), np.abs(n.dv_ic), ab, gb])
    std = np.maximum(std, cfg.min_std)
    return np.diag(std ** 2)


def initial_model(cfg: FilterConfig) -> FilterModel:
    return FilterModel(
        A=np.eye(15), H=measurement_matrix(), Q=process_noise(cfg.noise, 1.0, cfg.bias_q),
        R=measurement_noise(cfg.noise, cfg.min_std), P=initial_covariance(cfg),
    )


def compute_residual(aiding: Pose, s: ins.StrapdownState) -> MeasurementResidual:
    dp = aiding.p - s.p
    dpsi = d2e(e2d(aiding.att).T @ s.d_nb)
    return MeasurementResidual(np.concatenate([dp, dpsi]))


def _check_psd(P, where):
    w = np.linalg.eigvalsh(P)
    if w[0] < -1e-6:
        raise NumericalDivergence(f"{where}: covariance eigenvalue {w[0]:.3e}")


def predict(model: FilterModel, x: ErrorState) -> tuple[ErrorState, FilterModel]:
    A = model.A
    P = A @ model.P @ A.T + model.Q
    P = 0.5 * (P + P.T)
    _check_psd(P, "predict")
    return ErrorState(A @ x.vec), replace(model, P=P)


def update(model: FilterModel, dz: MeasurementResidual, max_cond: float = 1e12) -> tuple[ErrorState, FilterModel]:
    P, H, R = model.P, model.H, model.R
    S = H @ P @ H.T + R
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) >= max_cond:
        raise SingularInnovation(f"innovation covariance condition {np.linalg.cond(S):.3e}")
    K = np.linalg.solve(S, H @ P).T
    dx = K @ dz.dz
    IKH = np.eye(P.shape[0]) - K @ H
    P = IKH @ P @ IKH.T + K @ R @ K.T
    P = 0.5 * (P + P.T)
    return ErrorState(dx), replace(model, P=P)


class FusionFilter:
    """Online strapdown + ES-EKF pair; one instance per rollout."""

    def __init__(self, ic_pose: Pose, ic_v, cfg: FilterConfig | None = None, t0: float = 0.0):
        self.cfg = cfg or FilterConfig()
        self.state = ins.init(ic_pose, ic_v, t0)
        self.model = initial_model(self.cfg)
        self.x = ErrorState()
        self._t_last = t0
        self._reset_accumulators()
        self.updates = 0

    def _reset_accumulators(self):
        self.sigma_D = np.zeros((3, 3))
        self.dv_sf = np.zeros(3)

    def propagate(self, inc: ImuIncrements) -> ins.StrapdownState:
        s = ins.strapdown_step(self.state, inc, self.cfg.g)
        d_bn = s.d_nb.T
        self.sigma_D += d_bn * inc.dt
        self.dv_sf += d_bn @ (inc.q_v - s.b_hat * inc.dt)
        self.state = s
        return s

    def aid(self, measurement: Pose) -> ErrorState:
        """Run predict / residual / update / feedback / reset at an aiding epoch."""
        dt_m = self.state.t - self._t_last
        if dt_m > 1e-12:
            A_s = -skew(self.dv_sf)
            A = build_system_matrix(self.sigma_D, A_s, dt_m, self.cfg.pos_vel_coupling)
            Q = process_noise(self.cfg.noise, dt_m, self.cfg.bias_q)
            self.model = replace(self.model, A=A, Q=Q, dt_m=dt_m, sigma_D=self.sigma_D.copy(), A_s=A_s)
            self.x, self.model = predict(self.model, self.x)
        dz = compute_residual(measurement, self.state)
        dx, self.model = update(self.model, dz)
        self.state = ins.apply_correction(self.state, dx)
        self.x = ErrorState()
        self._t_last = self.state.t
        self._reset_accumulators()
        self.updates += 1
        return dx

    @property
    def pose(self) -> Pose:
        return self.state.pose


@dataclass
class FusionResult:
    t: np.ndarray
    p: np.ndarray
    att: np.ndarray
    v: np.ndarray
    epoch_t: np.ndarray
    epoch_index: np.ndarray  # sample index of each aiding epoch
    P: np.ndarray  # posterior covariance per epoch, (M, 15, 15)

    def snapshots(self):
        """(t, row-major 15x15 list) pairs for serialisation."""
        return [(float(t), P.reshape(-1).tolist()) for t, P in zip(self.epoch_t, self.P)]


def fuse_rollout(imu_stream: list[ImuIncrements], aiding_stream, ic, cfg: FilterConfig | None = None) -> FusionResult:
    """Run the full perception loop over recorded streams.

    ``aiding_stream`` holds ``(t, Pose)`` pairs whose times must fall on IMU
    sample times; an empty stream gives pure dead reckoning. ``ic`` is
    ``(pose, velocity)`` or ``(pose, velocity, t0)``.
    """
    ic_pose, ic_v, *rest = ic
    t0 = rest[0] if rest else 0.0
    f = FusionFilter(ic_pose, ic_v, cfg, t0)
    n = len(imu_stream)
    t = np.empty(n + 1)
    p = np.empty((n + 1, 3))
    att = np.empty((n + 1, 3))
    v = np.empty((n + 1, 3))
    epochs, idx, covs = [], [], []
    aiding = list(aiding_stream)
    j = 0

    def record(k):
        s = f.state
        t[k], p[k], att[k], v[k] = s.t, s.p, d2e(s.d_nb), s.v

    def maybe_aid(k, tol):
        nonlocal j
        if j < len(aiding) and aiding[j][0] < f.state.t - tol:
            raise StreamMisaligned(f"aiding sample at t={aiding[j][0]:.6f} is not on an IMU sample time")
        if j < len(aiding) and abs(aiding[j][0] - f.state.t) <= tol:
            f.aid(aiding[j][1])
            epochs.append(f.state.t)
            idx.append(k)
            covs.append(f.model.P.copy())
            j += 1

    tol = 1e-3 * (imu_stream[0].dt if imu_stream else 1.0)
    maybe_aid(0, tol)
    record(0)
    for k, inc in enumerate(imu_stream, start=1):
        f.propagate(inc)
        maybe_aid(k, 1e-3 * inc.dt)
        record(k)
    if j < len(aiding):
        raise StreamMisaligned(f"{len(aiding) - j} aiding samples beyond the IMU stream")
    return FusionResult(t, p, att, v, np.array(epochs), np.array(idx, dtype=int),
                        np.array(covs) if covs else np.zeros((0, 15, 15)))


def aiding_from_truth(traj, rate_hz: float, noise: NoiseConfig, rng, skip_t0: bool = True):
    """Sample aiding measurements from a true trajectory at ``rate_hz``."""
    dt = traj[1].t - traj[0].t
    every = int(round(1.0 / (rate_hz * dt)))
    start = every if skip_t0 else 0
    return [(traj[k].t, corrupt_aiding(traj[k].pose, noise, rng)) for k in range(start, len(traj), every)]


def position_nees(err: np.ndarray, P_pos: np.ndarray) -> np.ndarray:
    """Per-epoch NEES ``e^T P^-1 e`` for stacked errors (M,3) and covariances (M,3,3)."""
    sol = np.linalg.solve(P_pos, err[..., None])[..., 0]
    return np.einsum("mi,mi->m", err, sol)


def nees_envelope(dof: int, runs: int, prob: float = 0.95) -> tuple[float, float]:
    """Two-sided chi-square bounds for NEES averaged over ``runs`` runs."""
    a = (1.0 - prob) / 2.0
    return chi2.ppf(a, dof * runs) / runs, chi2.ppf(1.0 - a, dof * runs) / runs
