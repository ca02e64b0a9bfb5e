"""Command-line entry point ``wetbeam``.

Exit codes: 0 on success, 2 on a configuration error, 3 when the
experiment fails.  ``WETBEAM_LOG`` sets the logging level (default
``WARNING``).
"""
from __future__ import annotations

import argparse
import datetime as _dt
import logging
import os
import sys

from .errors import ConfigurationError, ExperimentError, WetbeamError
from .harness import PRESETS, prepare_config, run_experiment, write_results

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EXPERIMENT = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wetbeam",
                                     description="Power-beacon beamforming experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write CSV results")
    run.add_argument("--preset", choices=sorted(PRESETS))
    run.add_argument("--config", help="YAML file with configuration keys")
    run.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE", help="override one configuration key (repeatable)")
    run.add_argument("--seed", type=int, help="master seed")
    run.add_argument("--out", help="output directory (default: output_dir of the config)")
    run.add_argument("--scale", type=float, default=1.0,
                     help="shrink M and the realization count by this factor")
    run.add_argument("--workers", type=int, help="number of worker processes")
    run.add_argument("--focus", choices=("sca", "conjugate"), default="sca",
                     help="ITS configuration used for the fig8 maps")

    val = sub.add_parser("validate", help="check a configuration file")
    val.add_argument("--config", required=True)
    val.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE")
    return parser


def _configure_logging() -> None:
    level = os.environ.get("WETBEAM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            cfg = prepare_config(path=args.config, overrides=args.overrides)
            print(f"configuration OK: {len(cfg.to_dict())} keys")
            return EXIT_OK
        cfg = prepare_config(args.preset, args.config, args.overrides, args.seed, args.scale)
        if args.workers is not None and args.workers < 1:
            raise ConfigurationError("--workers must be >= 1")
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    try:
        result = run_experiment(cfg, args.preset, args.workers, args.focus)
        paths = write_results(result, args.out or cfg.output_dir, started)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ExperimentError, WetbeamError) as exc:
        print(f"experiment failed: {exc}", file=sys.stderr)
        return EXIT_EXPERIMENT
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
