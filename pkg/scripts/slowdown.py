"""Paired noise-less vs sensor-fusion comparison.

Runs both scenarios over the same seeds and reports how often and by how
much the noisy rollouts take longer.

    python3 scripts/slowdown.py --rollouts 50 --seed 0
"""
import argparse
import json

from dozersim.config import preset
from dozersim.harness import compare_scenarios, run_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--rollouts", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--b", default="sensor_fusion", choices=["sensor_fusion", "extreme"])
    ap.add_argument("--fixed-episode", action="store_true")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="runs/slowdown")
    args = ap.parse_args()
    kw = dict(rollouts=args.rollouts, seed=args.seed, fixed_episode=args.fixed_episode,
              write_artifacts=False, workers=args.workers)
    a = run_scenario(preset("noise_less", **kw), out=f"{args.out}/noise_less")
    b = run_scenario(preset(args.b, **kw), out=f"{args.out}/{args.b}")
    rep = compare_scenarios(a, b)
    t = rep["episode_time"]
    print(f"{args.b} slower in {t['b_greater']}/{rep['pairs']} pairs ({t['fraction_b_greater']:.0%}), "
          f"sign test p={t['sign_test_p']:.2g}")
    print(f"mean time {a['levels'][0]['episode_time_mean']:.1f} s -> {b['levels'][0]['episode_time_mean']:.1f} s "
          f"({t['relative_mean_delta']:+.1%}), median delta {t['median_delta']:+.1f} s")
    print(f"push success rate {a['levels'][0]['success_rate']:.2f} -> {b['levels'][0]['success_rate']:.2f}")
    print(json.dumps(rep, indent=1))


if __name__ == "__main__":
    main()
