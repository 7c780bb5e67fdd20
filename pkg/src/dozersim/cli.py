"""Command line entry point: ``run``, ``compare`` and ``export-dataset``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import SCENARIOS, dump_yaml, from_dict, load_config
from .errors import ConfigError, MismatchedEnv
from .harness import compare_scenarios, exit_code, export_scenario_dataset, load_summary, run_scenario

log = logging.getLogger("dozersim")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


def _config(args):
    over = {"scenario": args.scenario, "rollouts": args.rollouts, "seed": args.seed,
            "output": args.out, "workers": getattr(args, "workers", None)}
    if args.config is None:
        return from_dict({}, **over)
    return load_config(args.config, **over)


def _common(p: argparse.ArgumentParser, out_required: bool = False) -> None:
    p.add_argument("--config", help="YAML scenario file (noise in cm, cm/s, deg; env in SI)")
    p.add_argument("--scenario", choices=SCENARIOS)
    p.add_argument("--rollouts", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=out_required)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dozersim", description="Sensor-fusion-in-the-loop grading simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", help="run a scenario's rollouts")
    _common(run)
    run.add_argument("--workers", type=int)
    run.add_argument("--print-config", action="store_true", help="print the effective config and exit")

    cmp_ = sub.add_parser("compare", help="paired comparison of two summaries (B minus A)")
    cmp_.add_argument("a")
    cmp_.add_argument("b")
    cmp_.add_argument("--out", help="also write the report as JSON here")

    exp = sub.add_parser("export-dataset", help="render covariance-sampled observations at each decision")
    _common(exp, out_required=True)
    exp.add_argument("--k", type=int, default=8)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.cmd == "run":
            cfg = _config(args)
            if args.print_config:
                sys.stdout.write(dump_yaml(cfg))
                return EXIT_OK
            summary = run_scenario(cfg)
            for lv in summary["levels"]:
                tag = "" if lv["level"] is None else f"yaw {lv['level']:g} deg: "
                print(f"{tag}time {lv['episode_time_mean']} s, uncleared {lv['uncleared_volume_mean']} m3, "
                      f"success {lv['success_rate']}, failed {lv['failed']}/{lv['n']}")
            print(f"wrote {cfg.output}/summary.json")
            return exit_code(summary)
        if args.cmd == "compare":
            report = compare_scenarios(load_summary(args.a), load_summary(args.b))
            text = json.dumps(report, indent=1, sort_keys=True)
            print(text)
            if args.out:
                with open(args.out, "w") as fh:
                    fh.write(text + "\n")
            return EXIT_OK
        if args.cmd == "export-dataset":
            if args.k < 1:
                raise ConfigError("k", "must be >= 1")
            cfg = _config(args)
            manifest = export_scenario_dataset(cfg, args.k, args.out)
            print(f"wrote {len(manifest)} samples to {args.out}")
            return EXIT_OK
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except MismatchedEnv as e:
        print(f"cannot compare: {e}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
