"""Heightmap sandbox, kinematic dozer and a volume-conserving blade model."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import OutOfBounds, PlacementFailure
from .geometry import Pose

TRUNC_SIGMAS = 3.0
DEPOSIT_ROWS = 4
_TRUNC_MASS = 1.0 - math.exp(-0.5 * TRUNC_SIGMAS ** 2)


@dataclass
class Heightmap:
    """Uniform grid, ``h[ix, iy]`` with cell centres at ``((ix+.5)c, (iy+.5)c)``."""

    cell_size: float
    h: np.ndarray
    target_h: float = 0.0
    dump_x: float = math.inf  # cells/blade beyond this x are in the dump strip

    @property
    def nx(self) -> int:
        return self.h.shape[0]

    @property
    def ny(self) -> int:
        return self.h.shape[1]

    @property
    def size(self) -> tuple[float, float]:
        return self.nx * self.cell_size, self.ny * self.cell_size

    def volume(self) -> float:
        return float(self.h.sum()) * self.cell_size ** 2

    def contains(self, x: float, y: float) -> bool:
        w, hgt = self.size
        return 0.0 <= x <= w and 0.0 <= y <= hgt

    def copy(self) -> "Heightmap":
        return Heightmap(self.cell_size, self.h.copy(), self.target_h, self.dump_x)


@dataclass
class DozerBody:
    pose: Pose
    blade_width: float = 0.45
    blade_capacity: float = 0.010
    blade_load: float = 0.0
    speed: float = 0.3
    dumped: float = 0.0  # cumulative volume removed at the dump strip


@dataclass
class GradeMetrics:
    episode_time: float
    uncleared_volume: float
    legs: int


@dataclass
class TerrainConfig:
    width: float = 2.5
    height: float = 2.5
    cell_size: float = 0.025
    target_h: float = 0.0
    dump_width: float = 0.4
    piles: tuple[int, int] = (3, 3)
    pile_volume: tuple[float, float] = (0.0055, 0.0075)
    pile_sigma: tuple[float, float] = (0.045, 0.055)
    pile_x: tuple[float, float] = (0.7, 1.5)
    start_x: float = 0.45
    blade_width: float = 0.45
    blade_capacity: float = 0.010
    speed: float = 0.3
    max_tries: int = 200


def blob_heights(hm: Heightmap, cx: float, cy: float, sigma: float, volume: float) -> np.ndarray:
    """Truncated Gaussian pile whose continuous volume is ``volume``."""
    c = hm.cell_size
    x = (np.arange(hm.nx) + 0.5) * c
    y = (np.arange(hm.ny) + 0.5) * c
    r2 = (x[:, None] - cx) ** 2 + (y[None, :] - cy) ** 2
    peak = volume / (2.0 * math.pi * sigma ** 2 * _TRUNC_MASS)
    blob = peak * np.exp(-0.5 * r2 / sigma ** 2)
    blob[r2 > (TRUNC_SIGMAS * sigma) ** 2] = 0.0
    return blob


def flat_map(cfg: TerrainConfig) -> Heightmap:
    nx = int(round(cfg.width / cfg.cell_size))
    ny = int(round(cfg.height / cfg.cell_size))
    return Heightmap(cfg.cell_size, np.full((nx, ny), cfg.target_h), cfg.target_h, cfg.width - cfg.dump_width)


def spawn_episode(rng: np.random.Generator, cfg: TerrainConfig | None = None) -> tuple[Heightmap, DozerBody]:
    """Random piles on a flat base plus a dozer on the upstream border facing the dump."""
    cfg = cfg or TerrainConfig()
    hm = flat_map(cfg)
    n = int(rng.integers(cfg.piles[0], cfg.piles[1] + 1))
    placed: list[tuple[float, float, float]] = []
    tries = 0
    while len(placed) < n:
        tries += 1
        if tries > cfg.max_tries:
            raise PlacementFailure(f"placed {len(placed)} of {n} piles in {cfg.max_tries} tries")
        sigma = float(rng.uniform(*cfg.pile_sigma))
        r = TRUNC_SIGMAS * sigma
        cx = float(rng.uniform(cfg.pile_x[0], cfg.pile_x[1]))
        cy = float(rng.uniform(r + cfg.cell_size, cfg.height - r - cfg.cell_size))
        if cx + r >= hm.dump_x:
            continue
        if any(math.hypot(cx - px, cy - py) < r + pr + 0.05 for px, py, pr in placed):
            continue
        placed.append((cx, cy, r))
        vol = float(rng.uniform(*cfg.pile_volume))
        hm.h += blob_heights(hm, cx, cy, sigma, vol)
    # dozer: upstream side facing the dump, blade segment clear of every pile
    half = 0.5 * cfg.blade_width
    for _ in range(cfg.max_tries):
        y0 = float(rng.uniform(half, cfg.height - half))
        if all(math.hypot(cfg.start_x - px, max(abs(y0 - py) - half, 0.0)) > pr for px, py, pr in placed):
            break
    else:
        raise PlacementFailure("no clear start pose for the dozer")
    dozer = DozerBody(Pose.planar(cfg.start_x, y0, 0.0), cfg.blade_width, cfg.blade_capacity,
                      speed=cfg.speed)
    return hm, dozer


def uncleared_volume(hm: Heightmap) -> float:
    return float(np.maximum(hm.h - hm.target_h, 0.0).sum()) * hm.cell_size ** 2


def decision_success(blade_load_at_leg_end: float, capacity: float) -> bool:
    return blade_load_at_leg_end > 0.5 * capacity


def _block(hm: Heightmap, xs, ys, pad: float) -> tuple[slice, slice, np.ndarray, np.ndarray]:
    """Index block covering the points ``(xs, ys)`` plus ``pad`` metres, with cell-centre coordinates."""
    c = hm.cell_size
    i0 = max(int(math.floor((min(xs) - pad) / c)), 0)
    i1 = min(int(math.ceil((max(xs) + pad) / c)) + 1, hm.nx)
    j0 = max(int(math.floor((min(ys) - pad) / c)), 0)
    j1 = min(int(math.ceil((max(ys) + pad) / c)) + 1, hm.ny)
    cx = (np.arange(i0, i1) + 0.5) * c
    cy = (np.arange(j0, j1) + 0.5) * c
    return slice(i0, i1), slice(j0, j1), cx, cy


def _frame(x, y, psi, cx, cy):
    """Longitudinal/lateral coordinates of cell centres in a blade frame."""
    dx = cx[:, None] - x
    dy = cy[None, :] - y
    cp, sp = math.cos(psi), math.sin(psi)
    return dx * cp + dy * sp, -dx * sp + dy * cp


def _deposit(hm: Heightmap, d: DozerBody, x, y, psi) -> None:
    """Spread the blade load over the few rows of cells just ahead of the blade."""
    c, half = hm.cell_size, 0.5 * d.blade_width
    ex, ey = -math.sin(psi) * half, math.cos(psi) * half
    si, sj, cx, cy = _block(hm, (x + ex, x - ex), (y + ey, y - ey), (DEPOSIT_ROWS + 1) * c)
    s, lat = _frame(x, y, psi, cx, cy)
    for lo, hi in ((0.0, DEPOSIT_ROWS * c), (-c, 0.0), (-2 * c, c)):
        mask = (s > lo) & (s <= hi) & (np.abs(lat) <= half)
        n = int(mask.sum())
        if n:
            hm.h[si, sj][mask] += d.blade_load / (n * c * c)
            d.blade_load = 0.0
            return
    # pose is in bounds, so the widest band always holds the blade's own cell
    raise AssertionError("no cell under the blade")


def advance_dozer(hm: Heightmap, d: DozerBody, step: float, dyaw: float = 0.0) -> tuple[Heightmap, DozerBody]:
    """Turn by ``dyaw`` then move ``step`` metres along the heading (negative = reverse).

    Forward motion cuts every cell centre swept by the blade segment down to
    the target grade and loads the blade up to capacity; the rest spills to
    the cells just beyond the blade ends. Reversing drops any load in front
    of the blade. While the blade is in the dump strip its load is removed.
    Sand volume on map + blade + dumped is conserved.
    """
    c = hm.cell_size
    x0, y0 = float(d.pose.p[0]), float(d.pose.p[1])
    psi = (d.pose.yaw + dyaw + math.pi) % (2.0 * math.pi) - math.pi
    cp, sp = math.cos(psi), math.sin(psi)
    x1 = x0 + step * cp
    y1 = y0 + step * sp
    if not hm.contains(x1, y1):
        raise OutOfBounds(f"dozer at ({x1:.3f}, {y1:.3f}) leaves the map")
    if step > c + 1e-12:
        raise ValueError(f"step {step:.4f} m exceeds one cell")
    if step < 0 and d.blade_load > 0:
        _deposit(hm, d, x0, y0, psi)
    if step > 0:
        half = 0.5 * d.blade_width
        nx_, ny_ = -sp * half, cp * half
        si, sj, cx, cy = _block(hm, (x0 + nx_, x0 - nx_, x1 + nx_, x1 - nx_),
                                (y0 + ny_, y0 - ny_, y1 + ny_, y1 - ny_), c)
        sub = hm.h[si, sj]  # view: edits land in the map
        if sub.size and sub.max() > hm.target_h:
            s, lat = _frame(x1, y1, psi, cx, cy)
            mask = (s > -step) & (s <= 0.0) & (np.abs(lat) <= half)
            excess = np.where(mask, np.maximum(sub - hm.target_h, 0.0), 0.0)
            total = float(excess.sum()) * c * c
            if total > 0.0:
                room = d.blade_capacity - d.blade_load
                if total <= room:
                    sub -= excess
                    d.blade_load += total
                else:
                    flanks = []
                    for sign in (1.0, -1.0):
                        fx = x1 - sign * (half + c) * sp
                        fy = y1 + sign * (half + c) * cp
                        if hm.contains(fx, fy):
                            flanks.append((min(int(fx / c), hm.nx - 1), min(int(fy / c), hm.ny - 1)))
                    if flanks:
                        sub -= excess
                        share = (total - room) / len(flanks) / (c * c)
                        for fi, fj in flanks:
                            hm.h[fi, fj] += share
                    else:
                        sub -= excess * (room / total)
                    d.blade_load = d.blade_capacity
    d.pose = Pose([x1, y1, d.pose.p[2]], [d.pose.att[0], d.pose.att[1], psi])
    if x1 >= hm.dump_x and d.blade_load > 0:
        d.dumped += d.blade_load
        d.blade_load = 0.0
    return hm, d


# --- export -----------------------------------------------------------------


def write_heightmap_csv(h: np.ndarray, path) -> None:
    np.savetxt(path, h, delimiter=",", fmt="%.17g")


def read_heightmap_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=float))


def write_pgm16(h: np.ndarray, path, scale: float | None = None) -> float:
    """16-bit binary PGM (rows = first axis); returns metres per grey level."""
    h = np.asarray(h, dtype=float)
    lo = float(h.min())
    if scale is None:
        span = float(h.max()) - lo
        scale = span / 65535.0 if span > 0 else 1.0
    img = np.clip(np.round((h - lo) / scale), 0, 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{h.shape[1]} {h.shape[0]}\n65535\n".encode("ascii"))
        fh.write(img.tobytes())
    return scale


def read_pgm16(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    header = data.split(b"\n", 3)
    w, hgt = map(int, header[1].split())
    return np.frombuffer(header[3], dtype=">u2").reshape(hgt, w).astype(np.uint16)


def export_heightmap(hm: Heightmap, stem) -> dict:
    """Write ``<stem>.csv``, ``<stem>.pgm`` and a ``<stem>.json`` sidecar."""
    stem = str(stem)
    write_heightmap_csv(hm.h, stem + ".csv")
    scale = write_pgm16(hm.h, stem + ".pgm")
    meta = {
        "cell_size": hm.cell_size, "nx": hm.nx, "ny": hm.ny, "target_h": hm.target_h,
        "dump_x": hm.dump_x if math.isfinite(hm.dump_x) else None, "axis0": "x", "axis1": "y", "units": "m",
        "pgm_offset": float(hm.h.min()), "pgm_scale": scale,
    }
    with open(stem + ".json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
    return meta


def terrain_config_dict(cfg: TerrainConfig) -> dict:
    return asdict(cfg)

