"""Command line entry point.

``memnet-sim`` loads a configuration (JSON file or named preset), applies
flag overrides, runs one scenario and either writes the report bundle to
``--out`` or prints the report JSON to stdout.  Exit status is 0 on
success; configuration and runtime errors print a diagnostic to stderr and
exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import config as cf
from . import harness as h


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memnet-sim",
        description=(
            "Monte Carlo simulator for a three-node heralded quantum "
            "memory network"
        ),
    )
    source = parser.add_mutually_exclusive_group()
    source.add_argument(
        "--config", metavar="FILE", help="JSON experiment configuration"
    )
    source.add_argument(
        "--preset",
        choices=("ideal", "paper"),
        help="named built-in configuration (default: paper)",
    )
    parser.add_argument(
        "--scenario",
        choices=cf.SCENARIO_IDS,
        help="scenario to run (overrides the configuration)",
    )
    parser.add_argument("--seed", type=int, help="master seed (unsigned)")
    parser.add_argument(
        "--samples", type=int, help="sample budget (see scenario docs)"
    )
    parser.add_argument(
        "--workers", type=int, help="worker threads (does not affect results)"
    )
    parser.add_argument(
        "--out", metavar="DIR", help="output directory for the report bundle"
    )
    return parser


def _load_config(args: argparse.Namespace) -> cf.ExperimentConfig:
    if args.config is not None:
        cfg = cf.ExperimentConfig.from_json(args.config)
    else:
        cfg = cf.preset(args.preset or "paper")
    overrides = {}
    for name in ("scenario", "seed", "samples", "workers"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.out is not None:
        overrides["out_dir"] = args.out
    if overrides:
        cfg = cfg.with_overrides(**overrides)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args)
        report = h.run_scenario(cfg)
        if cfg.out_dir:
            written = h.emit_report(report, cfg.out_dir)
            for path in written:
                print(path)
        else:
            print(
                json.dumps(
                    {
                        "scenario": report.scenario,
                        "seed": report.seed,
                        "body": report.body,
                        "meta": report.meta,
                    },
                    sort_keys=True,
                    indent=2,
                )
            )
    except (OSError, ValueError, KeyError) as exc:
        print(f"memnet-sim: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
