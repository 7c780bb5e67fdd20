"""Seeded batch rollouts, aggregation and paired scenario comparison.

Seed rule: rollout ``i`` under base seed ``s`` draws its noise streams from
``SeedSequence([s, i, 1])`` and spawns its episode from
``SeedSequence([s, i, 2])``; with ``fixed_episode`` every rollout grades
rollout 0's episode. Dataset augmentation draws from
``SeedSequence([s, i, 3])``. Sweep levels reuse the
same seeds, so levels are paired. Nothing depends on scheduling, so serial
and parallel runs write identical files.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .config import ScenarioConfig, env_fingerprint, level_noise, to_dict
from .env import AugmentedSample, export_dataset, sample_observations, spawn_and_run
from .errors import DozerSimError, MismatchedEnv, NumericalDivergence, SingularInnovation
from .eskf import FilterConfig
from .terrain import export_heightmap

RECORD_FIELDS = ("level", "index", "episode_seed", "noise_seed", "status", "episode_time",
                 "uncleared_volume", "uncleared_fraction", "initial_volume", "dumped", "legs",
                 "push_legs", "successes", "success_rate", "diverged", "reason", "error", "dir")
_DIVERGENCE = (NumericalDivergence, SingularInnovation)


def _seed_int(*entropy: int) -> int:
    return int(np.random.SeedSequence(list(entropy)).generate_state(1, dtype=np.uint32)[0])


def rollout_seeds(base: int, i: int, fixed_episode: bool) -> tuple[int, int]:
    """``(episode_seed, noise_seed)`` for rollout ``i``."""
    ep = _seed_int(base, 0 if fixed_episode else i, 2)
    return ep, _seed_int(base, i, 1)


@dataclass
class RolloutTask:
    cfg: ScenarioConfig
    level: float | None
    index: int
    out_dir: str | None


def _filter_cfg(cfg: ScenarioConfig) -> FilterConfig:
    return FilterConfig(noise=cfg.filter_noise or cfg.noise, pos_vel_coupling=cfg.pos_vel_coupling, g=cfg.env.g)


def _write_artifacts(res, d: str) -> None:
    os.makedirs(d, exist_ok=True)
    np.savetxt(os.path.join(d, "trajectory.csv"), res.log, delimiter=",", fmt="%.9g",
               header="t,true_x,true_y,true_yaw,est_x,est_y,est_yaw,blade_load", comments="")
    export_heightmap(res.final_map, os.path.join(d, "heightmap"))
    with open(os.path.join(d, "legs.json"), "w") as fh:
        json.dump([vars(leg) for leg in res.legs], fh, indent=1, sort_keys=True)


def run_rollout(task: RolloutTask) -> dict:
    """One rollout; failures are returned as records rather than raised."""
    cfg = task.cfg
    ep_seed, noise_seed = rollout_seeds(cfg.seed, task.index, cfg.fixed_episode)
    rec = {k: None for k in RECORD_FIELDS}
    rec.update(level=task.level, index=task.index, episode_seed=ep_seed, noise_seed=noise_seed)
    try:
        res = spawn_and_run(ep_seed, noise_seed, level_noise(cfg, task.level), cfg.env,
                            filter_cfg=_filter_cfg(cfg))
    except _DIVERGENCE as e:
        rec.update(status="diverged", diverged=True, error=f"{type(e).__name__}: {e}")
        return rec
    except DozerSimError as e:
        rec.update(status="error", diverged=False, error=f"{type(e).__name__}: {e}")
        return rec
    flags = res.success_flags()
    rec.update(
        status="diverged" if res.diverged else "ok",
        episode_time=res.metrics.episode_time, uncleared_volume=res.metrics.uncleared_volume,
        uncleared_fraction=res.metrics.uncleared_volume / res.initial_volume,
        initial_volume=res.initial_volume, dumped=res.dumped, legs=res.metrics.legs,
        push_legs=len(flags), successes=int(sum(flags)),
        success_rate=(sum(flags) / len(flags)) if flags else None,
        diverged=res.diverged, reason=res.reason, error=None,
    )
    if task.out_dir is not None:
        rel = _rollout_dir(task.level, task.index)
        _write_artifacts(res, os.path.join(task.out_dir, rel))
        rec["dir"] = rel
    return rec


def _rollout_dir(level, index) -> str:
    head = "rollouts" if level is None else os.path.join("rollouts", f"yaw_{level:g}")
    return os.path.join(head, f"{index:04d}")


def levels(cfg: ScenarioConfig) -> list[float | None]:
    return list(cfg.yaw_levels) if cfg.scenario == "yaw_sweep" else [None]


def _mean_std(vals) -> tuple[float | None, float | None]:
    v = [x for x in vals if x is not None]
    if not v:
        return None, None
    return float(np.mean(v)), float(np.std(v))


def aggregate(records: list[dict]) -> dict:
    """Statistics over completed rollouts; failed ones only count toward the rates."""
    done = [r for r in records if r["episode_time"] is not None]
    t_mean, t_std = _mean_std(r["episode_time"] for r in done)
    u_mean, u_std = _mean_std(r["uncleared_volume"] for r in done)
    f_mean, f_std = _mean_std(r["uncleared_fraction"] for r in done)
    pushes = sum(r["push_legs"] for r in done)
    return {
        "n": len(records), "completed": len(done),
        "failed": sum(r["status"] != "ok" for r in records),
        "divergence_rate": sum(bool(r["diverged"]) for r in records) / len(records),
        "episode_time_mean": t_mean, "episode_time_std": t_std,
        "uncleared_volume_mean": u_mean, "uncleared_volume_std": u_std,
        "uncleared_fraction_mean": f_mean, "uncleared_fraction_std": f_std,
        "success_rate": (sum(r["successes"] for r in done) / pushes) if pushes else None,
    }


def _spearman(y) -> float | None:
    if len(y) < 2 or any(v is None for v in y):
        return None
    rho = stats.spearmanr(np.arange(len(y)), y)[0]
    return None if math.isnan(rho) else float(rho)


def run_scenario(cfg: ScenarioConfig, out: str | None = None, workers: int | None = None) -> dict:
    """Execute every rollout of ``cfg`` and write the result files under ``out``."""
    out = cfg.output if out is None else out
    workers = cfg.workers if workers is None else workers
    os.makedirs(out, exist_ok=True)
    art = out if cfg.write_artifacts else None
    tasks = [RolloutTask(cfg, lv, i, art) for lv in levels(cfg) for i in range(cfg.rollouts)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run_rollout, tasks))  # map keeps submission order
    else:
        records = [run_rollout(t) for t in tasks]
    per_level = []
    for lv in levels(cfg):
        agg = aggregate([r for r in records if r["level"] == lv])
        per_level.append({"level": lv, **agg})
    eff = to_dict(cfg)
    for key in ("output", "workers"):  # do not affect results
        eff.pop(key)
    summary = {
        "scenario": cfg.scenario, "seed": cfg.seed, "rollouts": cfg.rollouts,
        "env_hash": env_fingerprint(cfg.env), "config": eff,
        "levels": per_level, "records": records,
    }
    if cfg.scenario == "yaw_sweep":
        summary["series"] = {
            "yaw_deg": [p["level"] for p in per_level],
            "episode_time_mean": [p["episode_time_mean"] for p in per_level],
            "uncleared_volume_mean": [p["uncleared_volume_mean"] for p in per_level],
            "spearman_time": _spearman([p["episode_time_mean"] for p in per_level]),
            "spearman_uncleared": _spearman([p["uncleared_volume_mean"] for p in per_level]),
        }
        _write_csv(os.path.join(out, "series.csv"), per_level,
                   ("level", "episode_time_mean", "episode_time_std", "uncleared_volume_mean",
                    "uncleared_volume_std", "success_rate", "divergence_rate", "completed"))
    _write_csv(os.path.join(out, "rollouts.csv"), records, RECORD_FIELDS)
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return summary


def _write_csv(path, rows, cols) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c]) for c in cols])


def exit_code(summary: dict) -> int:
    """0 clean, 3 when every failure is a divergence, 1 for any other failure."""
    bad = [r for r in summary["records"] if r["status"] != "ok"]
    if not bad:
        return 0
    return 3 if all(r["status"] == "diverged" for r in bad) else 1


# --- comparison -------------------------------------------------------------


def load_summary(path) -> dict:
    if os.path.isdir(path):
        path = os.path.join(path, "summary.json")
    with open(path) as fh:
        return json.load(fh)


def compare_scenarios(a: dict, b: dict) -> dict:
    """Paired deltas ``b - a`` over rollouts that share seeds and level."""
    if a["env_hash"] != b["env_hash"]:
        raise MismatchedEnv(f"environment specs differ ({a['env_hash']} vs {b['env_hash']})")
    key = lambda r: (r["level"], r["index"], r["episode_seed"], r["noise_seed"])  # noqa: E731
    rb = {key(r): r for r in b["records"]}
    pairs = [(r, rb[key(r)]) for r in a["records"] if key(r) in rb]
    pairs = [(x, y) for x, y in pairs if x["episode_time"] is not None and y["episode_time"] is not None]
    report = {"scenario_a": a["scenario"], "scenario_b": b["scenario"], "pairs": len(pairs)}
    for metric in ("episode_time", "uncleared_volume"):
        d = np.array([y[metric] - x[metric] for x, y in pairs], dtype=float)
        base = np.array([x[metric] for x, _ in pairs], dtype=float)
        pos, neg = int((d > 0).sum()), int((d < 0).sum())
        p = float(stats.binomtest(pos, pos + neg, 0.5).pvalue) if pos + neg else 1.0
        report[metric] = {
            "mean_delta": float(d.mean()) if len(d) else 0.0,
            "median_delta": float(np.median(d)) if len(d) else 0.0,
            "relative_mean_delta": float(d.mean() / base.mean()) if len(d) and base.mean() else 0.0,
            "b_greater": pos, "b_less": neg, "ties": int(len(d) - pos - neg),
            "fraction_b_greater": pos / len(d) if len(d) else 0.0,
            "sign_test_p": p,
        }
    return report


# --- dataset export ---------------------------------------------------------


def export_scenario_dataset(cfg: ScenarioConfig, k: int, out: str) -> list[dict]:
    """Run the scenario and render ``k`` covariance-sampled views at every push decision."""
    if k < 1:
        raise ValueError("k must be >= 1")
    samples: list[AugmentedSample] = []
    covs: list[dict] = []
    for lv in levels(cfg):
        for i in range(cfg.rollouts):
            ep_seed, noise_seed = rollout_seeds(cfg.seed, i, cfg.fixed_episode)
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, i, 3]))
            episode = i if lv is None else f"yaw_{lv:g}_{i:04d}"

            def hook(st, obs, action, episode=episode, rng=rng):
                leg = len(st.legs)
                covs.append({"covariance_id": f"{episode}/{leg}", "t": st.t,
                             "P": [float(v) for v in st.filter.model.P.ravel()]})
                for s in sample_observations(st.hm, st.filter.pose, st.filter.model.P, k, rng,
                                             labels=action, spec=cfg.env.obs):
                    s.obs.t = obs.t
                    s.episode, s.leg, s.cov_id = episode, leg, f"{episode}/{leg}"
                    samples.append(s)

            spawn_and_run(ep_seed, noise_seed, level_noise(cfg, lv), cfg.env,
                          filter_cfg=_filter_cfg(cfg), on_decision=hook)
    if not samples:
        raise DozerSimError("no push decisions were made; nothing to export")
    os.makedirs(out, exist_ok=True)
    manifest = export_dataset(samples, out)
    with open(os.path.join(out, "covariances.jsonl"), "w") as fh:
        for c in covs:  # row-major 15x15
            fh.write(json.dumps(c, sort_keys=True) + "\n")
    return manifest
