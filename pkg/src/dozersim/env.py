"""Closed-loop grading episodes: observations, pose-uncertainty sampling and the rollout loop.

Each IMU tick moves the true dozer with the follower's command (computed
from the *estimated* pose), synthesises the matching IMU increments,
corrupts them and feeds the fusion filter; aiding poses arrive at a lower
rate. Observations are cropped from the true heightmap but registered with
the estimated pose.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import NoSandVisible, OutOfBounds, TimeBudgetExceeded
from .eskf import FilterConfig, FusionFilter
from .geometry import Pose
from .noise import NoiseConfig, corrupt_aiding, corrupt_ic, corrupt_imu, rollout_streams
from .policy import (DONE, DRIVE, FollowerConfig, FollowerState, HeuristicConfig, HeuristicPolicy,
                     SiteLayout, WaypointAction, follow_step)
from .terrain import (DozerBody, GradeMetrics, Heightmap, TerrainConfig, advance_dozer,
                      decision_success, spawn_episode, uncleared_volume, write_heightmap_csv,
                      write_pgm16)
from .trajectory import G, IncrementSynthesizer

POSE_MARGINAL = [0, 1, 5]  # x, y, yaw rows of the 15-state covariance


@dataclass(frozen=True)
class ObservationSpec:
    rows: int = 64  # along the heading
    cols: int = 64  # across, positive to the right
    m_per_px: float = 0.025
    forward_offset: float = 0.65  # window centre ahead of the dozer (m)

    def body_grid(self, scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
        m = self.m_per_px * scale
        s = self.forward_offset + (np.arange(self.rows) - 0.5 * (self.rows - 1)) * m
        lat = (np.arange(self.cols) - 0.5 * (self.cols - 1)) * m
        return np.meshgrid(s, lat, indexing="ij")


@dataclass
class Observation:
    window: np.ndarray
    est_pose: Pose
    t: float = 0.0
    spec: ObservationSpec = field(default_factory=ObservationSpec)
    target_h: float = 0.0

    def pixel_to_world(self, i, j) -> np.ndarray:
        i = np.asarray(i, dtype=float)
        j = np.asarray(j, dtype=float)
        m = self.spec.m_per_px
        s = self.spec.forward_offset + (i - 0.5 * (self.spec.rows - 1)) * m
        lat = (j - 0.5 * (self.spec.cols - 1)) * m
        return _body_to_world(self.est_pose, s, lat)

    def world_to_pixel(self, xy) -> np.ndarray:
        s, lat = world_to_body(self.est_pose, xy)
        m = self.spec.m_per_px
        return np.stack([(s - self.spec.forward_offset) / m + 0.5 * (self.spec.rows - 1),
                         lat / m + 0.5 * (self.spec.cols - 1)], axis=-1)


@dataclass
class AugmentedSample:
    obs: Observation
    labels: WaypointAction | None  # in the sampled body frame: (forward, right) metres
    sample_pose: Pose
    episode: int = 0
    leg: int = 0
    index: int = 0
    cov_id: str = ""


def _body_to_world(pose: Pose, s, lat) -> np.ndarray:
    c, sn = math.cos(pose.yaw), math.sin(pose.yaw)
    return np.stack([pose.p[0] + s * c - lat * sn, pose.p[1] + s * sn + lat * c], axis=-1)


def world_to_body(pose: Pose, xy) -> tuple[np.ndarray, np.ndarray]:
    xy = np.asarray(xy, dtype=float)
    dx, dy = xy[..., 0] - pose.p[0], xy[..., 1] - pose.p[1]
    c, sn = math.cos(pose.yaw), math.sin(pose.yaw)
    return dx * c + dy * sn, -dx * sn + dy * c


def render_observation(hm: Heightmap, est_pose: Pose, spec: ObservationSpec | None = None,
                       t: float = 0.0, scale: float = 1.0) -> Observation:
    """Heading-aligned bilinear crop of ``hm`` registered at ``est_pose``."""
    spec = spec or ObservationSpec()
    if not hm.contains(est_pose.p[0], est_pose.p[1]):
        raise OutOfBounds(f"observation centre ({est_pose.p[0]:.3f}, {est_pose.p[1]:.3f}) off the map")
    s, lat = spec.body_grid(scale)
    xy = _body_to_world(est_pose, s, lat)
    c = hm.cell_size
    coords = [xy[..., 0] / c - 0.5, xy[..., 1] / c - 0.5]
    win = ndimage.map_coordinates(hm.h, coords, order=1, mode="nearest")
    w, h = hm.size
    outside = (xy[..., 0] < 0) | (xy[..., 0] > w) | (xy[..., 1] < 0) | (xy[..., 1] > h)
    win[outside] = hm.target_h
    return Observation(win, est_pose.copy(), t, spec, hm.target_h)


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (cov + cov.T))
    if w.min() < -1e-9 * max(1.0, abs(w).max()):
        raise ValueError("covariance is not positive semi-definite")
    return v * np.sqrt(np.clip(w, 0.0, None))


def sample_observations(hm: Heightmap, est_pose: Pose, cov, k: int, rng: np.random.Generator,
                        labels: WaypointAction | None = None, spec: ObservationSpec | None = None,
                        max_tries: int = 100, scale_std: float = 0.0) -> list[AugmentedSample]:
    """Render ``k`` observations at poses drawn from ``N(est_pose, cov)``.

    ``cov`` is the 3x3 (x, y, yaw) covariance; pass a 15x15 filter
    covariance and its pose marginal is taken. Draws whose centre falls off
    the map are redrawn up to ``max_tries`` times, then clipped onto the map.
    ``scale_std`` > 0 adds an independent window scale perturbation.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    cov = np.asarray(cov, dtype=float)
    if cov.shape == (15, 15):
        cov = cov[np.ix_(POSE_MARGINAL, POSE_MARGINAL)]
    L = _psd_factor(cov)
    mean = np.array([est_pose.p[0], est_pose.p[1], est_pose.yaw])
    z = rng.standard_normal((k, 3))
    draws = mean + z @ L.T
    w, h = hm.size
    for n in range(k):
        tries = 0
        while not hm.contains(draws[n, 0], draws[n, 1]) and tries < max_tries:
            draws[n] = mean + L @ rng.standard_normal(3)
            tries += 1
        draws[n, 0] = min(max(draws[n, 0], 0.0), w)
        draws[n, 1] = min(max(draws[n, 1], 0.0), h)
    scales = 1.0 + scale_std * rng.standard_normal(k) if scale_std > 0 else np.ones(k)
    out = []
    for n in range(k):
        pose = Pose([draws[n, 0], draws[n, 1], est_pose.p[2]], [est_pose.att[0], est_pose.att[1], draws[n, 2]])
        obs = render_observation(hm, pose, spec, scale=float(scales[n]))
        lab = None
        if labels is not None:
            g = np.stack(world_to_body(pose, labels.goto))
            r = np.stack(world_to_body(pose, labels.reverse_to))
            lab = WaypointAction(g, r)
        out.append(AugmentedSample(obs, lab, pose, index=n))
    return out


# --- dataset export ---------------------------------------------------------


def export_dataset(samples: list[AugmentedSample], path) -> list[dict]:
    """Write ``<path>/<episode>/<leg>/<k>.csv|.pgm`` plus ``manifest.jsonl``."""
    if not samples:
        raise ValueError("no samples to export")
    ordered = sorted(samples, key=lambda s: (s.episode, s.leg, s.index))
    manifest = []
    for s in ordered:
        rel = os.path.join(str(s.episode), str(s.leg), str(s.index))
        full = os.path.join(path, rel)
        try:
            os.makedirs(os.path.dirname(full), exist_ok=True)
            write_heightmap_csv(s.obs.window, full + ".csv")
            write_pgm16(s.obs.window, full + ".pgm")
        except OSError as e:
            raise OSError(f"writing sample {rel}: {e}") from e
        manifest.append({
            "file": rel + ".csv", "pgm": rel + ".pgm",
            "episode": s.episode, "leg": s.leg, "k": s.index,
            "sample_pose": [float(s.sample_pose.p[0]), float(s.sample_pose.p[1]), float(s.sample_pose.yaw)],
            "est_pose": [float(s.obs.est_pose.p[0]), float(s.obs.est_pose.p[1]), float(s.obs.est_pose.yaw)],
            "labels": s.labels.to_dict() if s.labels is not None else None,
            "covariance_id": s.cov_id, "t": s.obs.t,
            "m_per_px": s.obs.spec.m_per_px, "label_frame": "body forward/right (m)",
        })
    mpath = os.path.join(path, "manifest.jsonl")
    try:
        with open(mpath, "w") as fh:
            for rec in manifest:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    except OSError as e:
        raise OSError(f"writing {mpath}: {e}") from e
    return manifest


def load_dataset(path) -> list[tuple[dict, np.ndarray]]:
    from .terrain import read_heightmap_csv

    out = []
    with open(os.path.join(path, "manifest.jsonl")) as fh:
        for line in fh:
            rec = json.loads(line)
            out.append((rec, read_heightmap_csv(os.path.join(path, rec["file"]))))
    return out


# --- episodes ---------------------------------------------------------------


@dataclass
class EnvConfig:
    terrain: TerrainConfig = field(default_factory=TerrainConfig)
    obs: ObservationSpec = field(default_factory=ObservationSpec)
    follower: FollowerConfig = field(default_factory=FollowerConfig)
    heuristic: HeuristicConfig | None = None
    imu_rate: float = 100.0
    aiding_rate: float = 1.0
    time_budget: float = 300.0
    clear_fraction: float = 0.02
    survey_lanes: tuple[float, ...] | None = None  # default: three evenly spaced lanes
    final_heading: float | None = 0.0  # face the dump after each leg; None disables
    log_every: int = 10
    g: float = G

    def lanes(self) -> tuple[float, ...]:
        if self.survey_lanes is not None:
            return tuple(self.survey_lanes)
        h = self.terrain.height
        return (h / 6.0, h / 2.0, 5.0 * h / 6.0)

    def site(self) -> SiteLayout:
        t = self.terrain
        return SiteLayout(t.width, t.height, t.width - t.dump_width)

    def heuristic_config(self) -> HeuristicConfig:
        if self.heuristic is not None:
            return self.heuristic
        return HeuristicConfig(site=self.site())


@dataclass
class LegEvent:
    kind: str  # "push", "reposition" or "survey"
    goto: list
    reverse_to: list
    start_t: float
    duration: float
    peak_load: float
    success: bool
    diverged: bool


@dataclass
class EpisodeState:
    hm: Heightmap
    dozer: DozerBody
    filter: FusionFilter
    synth: IncrementSynthesizer
    noise: NoiseConfig
    imu_rng: np.random.Generator
    aid_rng: np.random.Generator
    cfg: EnvConfig
    initial_volume: float
    t: float = 0.0
    steps: int = 0
    terminated: bool = False
    reason: str = ""
    legs: list = field(default_factory=list)
    log: list = field(default_factory=list)

    @property
    def est_pose(self) -> Pose:
        return self.filter.pose


def init_episode(hm: Heightmap, dozer: DozerBody, noise: NoiseConfig, cfg: EnvConfig | None = None,
                 filter_noise: NoiseConfig | None = None, seed: int = 0,
                 filter_cfg: FilterConfig | None = None) -> EpisodeState:
    """Wire truth, IMU synthesis, noise and the filter for one rollout.

    ``filter_noise`` is the noise model the filter assumes; it defaults to
    the injected ``noise``.
    """
    cfg = cfg or EnvConfig()
    dt = 1.0 / cfg.imu_rate
    imu_rng, aid_rng = rollout_streams(seed)
    truth = dozer.pose
    v0 = np.zeros(3)
    ic_pose, ic_v = corrupt_ic(truth, v0, noise)
    fcfg = filter_cfg or FilterConfig(noise=filter_noise or noise, g=cfg.g)
    filt = FusionFilter(ic_pose, ic_v, fcfg)
    synth = IncrementSynthesizer(truth.p, truth.att, v0, dt, cfg.g)
    st = EpisodeState(hm, dozer, filt, synth, noise, imu_rng, aid_rng, cfg, uncleared_volume(hm))
    _log(st)
    return st


def _log(st: EpisodeState) -> None:
    tp, ep = st.dozer.pose, st.filter.state
    d = ep.d_nb
    st.log.append((st.t, tp.p[0], tp.p[1], tp.yaw, ep.p[0], ep.p[1], math.atan2(d[0, 1], d[0, 0]),
                   st.dozer.blade_load))


def _check_done(st: EpisodeState) -> None:
    if uncleared_volume(st.hm) < st.cfg.clear_fraction * st.initial_volume:
        st.terminated, st.reason = True, "cleared"
    elif st.t >= st.cfg.time_budget - 1e-9:
        st.terminated, st.reason = True, "time budget"


def _tick(st: EpisodeState, dyaw: float, speed: float) -> None:
    cfg = st.cfg
    dt = st.synth.dt
    try:
        advance_dozer(st.hm, st.dozer, speed * dt, dyaw)
    except OutOfBounds:
        advance_dozer(st.hm, st.dozer, 0.0, dyaw)  # blocked by the site fence
    p = st.dozer.pose
    inc = st.synth.step(p.p, p.att)
    st.filter.propagate(corrupt_imu(inc, st.noise, st.imu_rng))
    st.steps += 1
    st.t = st.steps * dt
    every = int(round(cfg.imu_rate / cfg.aiding_rate))
    if st.steps % every == 0:
        st.filter.aid(corrupt_aiding(p, st.noise, st.aid_rng))
        _check_done(st)
    if st.steps % cfg.log_every == 0:
        _log(st)


def step_episode(st: EpisodeState, action: WaypointAction) -> tuple[EpisodeState, list[LegEvent]]:
    """Execute one leg (drive to ``goto``, reverse to ``reverse_to``)."""
    if st.terminated:
        raise RuntimeError("episode already terminated")
    fcfg = st.cfg.follower
    f = FollowerState.for_action(action, st.cfg.final_heading)
    start_t, peak, diverged = st.t, 0.0, False
    dt = st.synth.dt
    while f.phase != DONE and not st.terminated:
        try:
            dyaw, speed, f = follow_step(f, st.filter.pose, dt, fcfg)
        except TimeBudgetExceeded:
            diverged = True
            break
        if f.phase == DONE:
            break
        _tick(st, dyaw, speed)
        if f.phase == DRIVE:
            peak = max(peak, st.dozer.blade_load)
    if not st.terminated:
        _check_done(st)
    kind = action.kind
    ev = LegEvent(kind, action.goto.tolist(), action.reverse_to.tolist(), start_t, st.t - start_t, peak,
                  kind == "push" and decision_success(peak, st.dozer.blade_capacity), diverged)
    st.legs.append(ev)
    return st, [ev]


def survey_action(est_pose: Pose, lane: float, site: SiteLayout, step: float = 0.3) -> WaypointAction:
    """Side-step to ``lane`` when nothing is in view."""
    x = min(max(est_pose.p[0], site.margin), site.dump_x - site.margin - step)
    return WaypointAction([x + step, lane], [x, lane], "survey")


@dataclass
class EpisodeResult:
    metrics: GradeMetrics
    legs: list
    reason: str
    initial_volume: float
    dumped: float
    log: np.ndarray
    final_map: Heightmap

    @property
    def diverged(self) -> bool:
        return any(leg.diverged for leg in self.legs)

    def success_flags(self) -> list[bool]:
        return [leg.success for leg in self.legs if leg.kind == "push"]


def run_episode(hm: Heightmap, dozer: DozerBody, noise: NoiseConfig, policy=None, cfg: EnvConfig | None = None,
                filter_noise: NoiseConfig | None = None, seed: int = 0, on_decision=None,
                filter_cfg: FilterConfig | None = None) -> EpisodeResult:
    """Decide, execute, repeat until the site is cleared or time runs out.

    When the policy sees no sand the dozer surveys the next lane; a full
    cycle of lanes with nothing in view ends the episode. ``on_decision``
    is called as ``(state, obs, action)`` before each push leg.
    """
    cfg = cfg or EnvConfig()
    policy = policy or HeuristicPolicy(cfg.heuristic_config())
    st = init_episode(hm, dozer, noise, cfg, filter_noise, seed, filter_cfg)
    site = cfg.site()
    lanes = cfg.lanes()
    visited: set[int] = set()
    _check_done(st)
    while not st.terminated:
        try:
            obs = render_observation(st.hm, st.filter.pose, cfg.obs, st.t)
            action = policy.decide(obs)
            visited.clear()
        except (NoSandVisible, OutOfBounds):  # nothing in view, or estimate off the map
            y = st.filter.pose.p[1]
            visited.add(min(range(len(lanes)), key=lambda i: (abs(lanes[i] - y), i)))
            todo = [i for i in range(len(lanes)) if i not in visited]
            if not todo:
                st.terminated, st.reason = True, "no sand visible"
                break
            nxt = min(todo, key=lambda i: (abs(lanes[i] - y), i))
            visited.add(nxt)
            action = survey_action(st.filter.pose, lanes[nxt], site)
        if on_decision is not None and action.kind == "push":
            on_decision(st, obs, action)
        step_episode(st, action)
    _log(st)
    metrics = GradeMetrics(st.t, uncleared_volume(st.hm), len(st.legs))
    return EpisodeResult(metrics, st.legs, st.reason, st.initial_volume, st.dozer.dumped,
                         np.array(st.log), st.hm)


def spawn_and_run(episode_seed: int, noise_seed: int, noise: NoiseConfig, cfg: EnvConfig | None = None,
                  filter_noise: NoiseConfig | None = None, policy=None, on_decision=None,
                  filter_cfg: FilterConfig | None = None) -> EpisodeResult:
    cfg = cfg or EnvConfig()
    hm, dozer = spawn_episode(np.random.default_rng(episode_seed), cfg.terrain)
    dozer.speed = cfg.follower.speed
    return run_episode(hm, dozer, noise, policy, cfg, filter_noise, noise_seed, on_decision, filter_cfg)
