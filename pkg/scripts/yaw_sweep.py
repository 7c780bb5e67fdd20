"""Yaw aiding-noise sweep with the heuristic policy.

Runs the yaw_sweep scenario through the harness and prints the per-level
means with their Spearman rank correlations against the noise level. The
time budget and the policy's minimum blob volume can be varied to study how
the uncleared-volume trend depends on them.

    python3 scripts/yaw_sweep.py --rollouts 20 --seeds 0 1
"""
import argparse
import time

from dozersim.config import preset
from dozersim.env import EnvConfig
from dozersim.harness import run_scenario
from dozersim.policy import HeuristicConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--rollouts", type=int, default=20)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--time-budget", type=float, default=None, help="episode clock in s (default: preset)")
    ap.add_argument("--min-volume", type=float, default=None, help="policy blob threshold in m^3")
    ap.add_argument("--fixed-episode", action="store_true", help="grade one spawned episode in every rollout")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="runs/yaw_sweep")
    args = ap.parse_args()

    base = preset("yaw_sweep").env
    env = EnvConfig(time_budget=args.time_budget or base.time_budget)
    if args.min_volume is not None:
        env.heuristic = HeuristicConfig(min_volume=args.min_volume, site=env.site())
    for seed in args.seeds:
        cfg = preset("yaw_sweep", rollouts=args.rollouts, seed=seed, env=env,
                     fixed_episode=args.fixed_episode, write_artifacts=False, workers=args.workers)
        t0 = time.perf_counter()
        s = run_scenario(cfg, out=f"{args.out}/seed_{seed}")
        ser = s["series"]
        print(f"seed {seed} ({time.perf_counter() - t0:.0f} s)")
        for lv in s["levels"]:
            print(f"  yaw {lv['level']:4.0f} deg: time {lv['episode_time_mean']:6.1f} s, "
                  f"uncleared {lv['uncleared_volume_mean'] * 1e3:5.2f} L, success {lv['success_rate']:.2f}")
        print(f"  spearman time {ser['spearman_time']:.3f}, uncleared {ser['spearman_uncleared']:.3f}")


if __name__ == "__main__":
    main()
