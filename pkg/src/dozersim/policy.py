"""Waypoint policies and the closed-loop waypoint follower.

Policies see an :class:`~dozersim.env.Observation` and return a
:class:`WaypointAction` in world coordinates. The follower steers using the
estimated pose only; any estimation error therefore shows up in the true
path the dozer takes.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Protocol

import numpy as np
from scipy import ndimage

from .errors import NoSandVisible, TimeBudgetExceeded

if TYPE_CHECKING:
    from .env import Observation


@dataclass
class WaypointAction:
    goto: np.ndarray
    reverse_to: np.ndarray
    kind: str = "push"  # "push", or "reposition"/"survey" for legs that are not grading decisions

    def __post_init__(self):
        self.goto = np.asarray(self.goto, dtype=float).reshape(2)
        self.reverse_to = np.asarray(self.reverse_to, dtype=float).reshape(2)

    def to_dict(self) -> dict:
        return {"goto": self.goto.tolist(), "reverse_to": self.reverse_to.tolist(), "kind": self.kind}


class PolicyInterface(Protocol):
    def decide(self, obs: "Observation") -> WaypointAction: ...


@dataclass
class SiteLayout:
    """What a policy knows about the site: map extent and where the dump is."""

    width: float = 2.5
    height: float = 2.5
    dump_x: float = 2.1
    margin: float = 0.2


@dataclass
class HeuristicConfig:
    min_height: float = 1e-3  # pixels above target by more than this are sand (m)
    min_volume: float = 1e-3  # smaller blobs are not worth a push (m^3)
    push_to: str = "dump"  # "dump": push through into the dump strip; "edge": stop at the blob edge
    dump_depth: float = 0.2  # how far past dump_x to push (m)
    stage_x: float = 0.45  # reverse to this staging line, behind every pile (m)
    reposition: float = 0.3  # forward length of a lane-change leg (m)
    lane_tol: float = 0.1  # already in the blob's lane when this close (m)
    tie_tol: float = 0.1  # blobs within this fraction of the largest count as equal; the nearest lane wins
    site: SiteLayout = field(default_factory=SiteLayout)


def _blobs(obs: "Observation", cfg: HeuristicConfig):
    excess = np.maximum(obs.window - obs.target_h, 0.0)
    mask = excess > cfg.min_height
    labels, n = ndimage.label(mask)
    if n == 0:
        return []
    idx = np.arange(1, n + 1)
    px2 = obs.spec.m_per_px ** 2
    vols = np.asarray(ndimage.sum(excess, labels, idx)) * px2
    out = []
    for lab, vol in zip(idx, vols):
        if vol < cfg.min_volume:
            continue
        ii, jj = np.nonzero(labels == lab)
        w = excess[ii, jj]
        world = obs.pixel_to_world(ii, jj)
        centroid = (world * w[:, None]).sum(axis=0) / w.sum()
        out.append((float(vol), centroid, world))
    # largest first; ties broken by position so the order is deterministic
    out.sort(key=lambda b: (-b[0], b[1][0], b[1][1]))
    return out


def heuristic_decide(obs: "Observation", cfg: HeuristicConfig | None = None) -> WaypointAction:
    """Push the largest visible pile toward the dump.

    Among piles within ``tie_tol`` of the largest, the one nearest the
    current lane is taken.

    The push line runs from the current estimated position through the
    volume-weighted centroid of the largest blob. ``goto`` is where that line
    leaves the blob on the dump side (``push_to="edge"``) or where it enters
    the dump strip (``push_to="dump"``). ``reverse_to`` lies on the staging
    line behind the piles, in the lane of the second-largest blob when there
    is one so the next push starts aligned. When the dozer is not yet in
    the blob's lane, a ``"reposition"`` leg moves it there first.
    """
    cfg = cfg or HeuristicConfig()
    blobs = _blobs(obs, cfg)
    if not blobs:
        raise NoSandVisible("window holds no sand above target")
    site = cfg.site
    p0 = np.asarray(obs.est_pose.p[:2], dtype=float)
    # near-equal blobs (e.g. the two flank spills of one push) would otherwise
    # swap rank with round-off as the dozer moves and make it shuttle between lanes
    top = [b for b in blobs if b[0] >= (1.0 - cfg.tie_tol) * blobs[0][0]]
    first = min(top, key=lambda b: abs(b[1][1] - p0[1]))
    blobs = [first] + [b for b in blobs if b is not first]
    _, centroid, world = blobs[0]
    u = centroid - p0
    dist = float(np.hypot(*u))
    u = u / dist if dist > 1e-9 else np.array([1.0, 0.0])
    edge = p0 + u * float(np.max((world - p0) @ u))
    if cfg.push_to == "edge":
        goto = edge
    elif cfg.push_to == "dump":
        # side-step into the blob's lane first, then push along the
        # pose->centroid line
        gx = site.dump_x + cfg.dump_depth
        lane = min(max(centroid[1], site.margin), site.height - site.margin)
        if abs(lane - p0[1]) > cfg.lane_tol or u[0] <= 1e-6:
            x = min(max(cfg.stage_x, site.margin), site.dump_x - site.margin - cfg.reposition)
            return WaypointAction([x + cfg.reposition, lane], [x, lane], "reposition")
        gy = p0[1] + u[1] * (gx - p0[0]) / u[0]
        gy = min(max(gy, site.margin), site.height - site.margin)
        goto = np.array([gx, gy])
    else:
        raise ValueError(f"unknown push_to {cfg.push_to!r}")
    lane_y = blobs[1][1][1] if len(blobs) > 1 else centroid[1]
    rx = min(max(cfg.stage_x, site.margin), site.dump_x - site.margin)
    ry = min(max(lane_y, site.margin), site.height - site.margin)
    goto = np.array([min(max(goto[0], 0.0), site.width), min(max(goto[1], 0.0), site.height)])
    return WaypointAction(goto, np.array([rx, ry]))


class HeuristicPolicy:
    def __init__(self, cfg: HeuristicConfig | None = None):
        self.cfg = cfg or HeuristicConfig()

    def decide(self, obs: "Observation") -> WaypointAction:
        return heuristic_decide(obs, self.cfg)


def observation_hash(obs: "Observation") -> str:
    return hashlib.sha256(np.ascontiguousarray(obs.window, dtype="<f8").tobytes()).hexdigest()


class ReplayPolicy:
    """Replays decisions recorded as JSON lines ``{"hash", "goto", "reverse_to"}``."""

    def __init__(self, path):
        self.table: dict[str, WaypointAction] = {}
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                self.table[rec["hash"]] = WaypointAction(rec["goto"], rec["reverse_to"], rec.get("kind", "push"))

    def decide(self, obs: "Observation") -> WaypointAction:
        h = observation_hash(obs)
        if h not in self.table:
            raise KeyError(f"no recorded decision for observation {h[:12]}")
        a = self.table[h]
        return WaypointAction(a.goto.copy(), a.reverse_to.copy(), a.kind)


class RecordingPolicy:
    """Wraps a policy and appends each decision to a replay file."""

    def __init__(self, inner: PolicyInterface, path):
        self.inner = inner
        self.path = path

    def decide(self, obs: "Observation") -> WaypointAction:
        a = self.inner.decide(obs)
        with open(self.path, "a") as fh:
            fh.write(json.dumps({"hash": observation_hash(obs), **a.to_dict()}) + "\n")
        return a


# --- follower ---------------------------------------------------------------

DRIVE, REVERSE, ALIGN, DONE = "drive", "reverse", "align", "done"


@dataclass
class FollowerConfig:
    gain: float = 2.0  # rad/s per rad of heading error
    max_yaw_rate: float = 1.5  # rad/s
    speed: float = 0.3  # m/s
    capture_radius: float = 0.0375  # 1.5 cells
    pass_radius: float = 0.1  # a waypoint this close and behind the vehicle counts as reached
    align_tol: float = math.radians(2.0)
    budget: float = 60.0  # s per leg


@dataclass
class FollowerState:
    target: np.ndarray
    phase: str = DRIVE
    elapsed: float = 0.0
    reverse_to: np.ndarray | None = None
    final_heading: float | None = None  # turn in place to this heading after reversing

    @classmethod
    def for_action(cls, a: WaypointAction, final_heading: float | None = None) -> "FollowerState":
        return cls(a.goto.copy(), DRIVE, 0.0, a.reverse_to.copy(), final_heading)


def _wrap(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def _advance_phase(f: FollowerState) -> FollowerState:
    if f.phase == DRIVE and f.reverse_to is not None:
        return replace(f, target=f.reverse_to.copy(), phase=REVERSE, reverse_to=None)
    if f.phase in (DRIVE, REVERSE) and f.final_heading is not None:
        return replace(f, phase=ALIGN)
    return replace(f, phase=DONE)


def follow_step(f: FollowerState, est_pose, dt: float,
                cfg: FollowerConfig | None = None) -> tuple[float, float, FollowerState]:
    """One control tick: returns ``(heading increment rad, speed m/s, state)``.

    Drive phase heads the blade at the target; reverse phase points the
    rear at it. Forward speed scales with ``cos`` of the heading error and
    is zero while the error exceeds 90 degrees, so large corrections turn
    in place. A target is reached inside the capture radius, or inside the
    pass radius once it lies behind the direction of travel.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    cfg = cfg or FollowerConfig()
    if f.phase == DONE:
        return 0.0, 0.0, f
    if f.elapsed > cfg.budget:
        raise TimeBudgetExceeded(f"{f.phase} phase exceeded {cfg.budget:.1f} s")
    yaw = est_pose.yaw
    if f.phase == ALIGN:
        err = _wrap(f.final_heading - yaw)
        if abs(err) <= cfg.align_tol:
            return 0.0, 0.0, replace(f, phase=DONE)
        rate = max(-cfg.max_yaw_rate, min(cfg.max_yaw_rate, cfg.gain * err))
        return rate * dt, 0.0, FollowerState(f.target, ALIGN, f.elapsed + dt, None, f.final_heading)
    ex, ey = f.target[0] - est_pose.p[0], f.target[1] - est_pose.p[1]
    dist = math.hypot(ex, ey)
    bearing = math.atan2(ey, ex)
    sign = 1.0
    if f.phase == REVERSE:
        bearing += math.pi
        sign = -1.0
    err = _wrap(bearing - yaw)
    if dist <= cfg.capture_radius or (dist <= cfg.pass_radius and math.cos(err) < 0.0):
        return 0.0, 0.0, _advance_phase(f)
    rate = max(-cfg.max_yaw_rate, min(cfg.max_yaw_rate, cfg.gain * err))
    speed = sign * cfg.speed * max(math.cos(err), 0.0)
    return rate * dt, speed, FollowerState(f.target, f.phase, f.elapsed + dt, f.reverse_to, f.final_heading)
