"""Command-line entry point: ztflow train | mine | enforce | simulate | report.

Exit codes: 0 success, 2 configuration/validation failure, 3 an edge
failed its training-stop heuristics.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import ConfigError, PipelineConfig
from .pipeline import (
    EXIT_CONFIG,
    cmd_enforce,
    cmd_mine,
    cmd_report,
    cmd_simulate,
    cmd_train,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ztflow",
        description="Zero-trust flow control: learn communication "
                    "requirements, mine least-privilege rules, and enforce "
                    "them in a simulated SDN data plane.")
    parser.add_argument("--config", "-c", required=True,
                        help="pipeline config JSON")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="override a config entry, e.g. arl.map_samples=100")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("train", help="ingest traces, build the CR graph, train "
                                 "per-edge detectors and flow models")
    sub.add_parser("mine", help="mine flow rules and rule associations from "
                                "the trained graph")
    enforce = sub.add_parser("enforce", help="replay a labeled trace against "
                                             "the trained models")
    enforce.add_argument("eval_trace", help="labeled packet trace CSV")
    enforce.add_argument("--window-duration", type=float, default=None,
                         help="association window override (seconds)")
    sim = sub.add_parser("simulate", help="run the zero-trust and baseline "
                                          "modes on the configured scenario")
    sim.add_argument("--window-duration", type=float, default=None,
                     help="association window override (seconds)")
    sub.add_parser("report", help="print a summary of produced artifacts")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = PipelineConfig.from_file(args.config)
        config.apply_overrides(args.overrides)
        if args.seed is not None:
            config.seed = args.seed
        if getattr(args, "window_duration", None) is not None:
            config.mining.window_duration = args.window_duration

        if args.command == "train":
            result = cmd_train(config)
        elif args.command == "mine":
            result = cmd_mine(config)
        elif args.command == "enforce":
            result = cmd_enforce(config, args.eval_trace)
        elif args.command == "simulate":
            result = cmd_simulate(config)
        else:
            result = cmd_report(config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if "text" in result.report:
        print(result.report["text"])
    else:
        print(json.dumps(result.report, indent=2, sort_keys=True, default=str))
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
