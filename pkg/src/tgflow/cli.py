"""Command line entry point: ``tgflow {gen-data,train,eval,sample,report}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from . import harness
from .config import load_config
from .errors import ConfigError, MissingInputError, NumericError, ReportError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_MISSING = 4


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="experiment config file")
    common.add_argument("--output", metavar="DIR", help="override output_dir from the config")
    common.add_argument("--jobs", type=int, default=1, metavar="INT", help="parallel training cells")
    common.add_argument("--resume", action="store_true", help="continue cells from their checkpoints")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tgflow", description="Tensor gauge flow model experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    gen = sub.add_parser("gen-data", parents=[common], help="write train/test mixture datasets")
    gen.add_argument("--csv", action="store_true", help="also export CSV copies")
    sub.add_parser("train", parents=[common], help="train every (N, variant, seed) cell")
    sub.add_parser("eval", parents=[common], help="score checkpoints on the test split")
    sub.add_parser("sample", parents=[common], help="integrate base draws through trained flows")
    sub.add_parser("report", parents=[common], help="normalized tables and SVG bar charts")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
        if args.output:
            cfg = replace(cfg, output_dir=args.output)
        if args.jobs < 1:
            raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
        if args.command == "gen-data":
            harness.cmd_gen_data(cfg, export_csv=args.csv)
        elif args.command == "train":
            harness.cmd_train(cfg, jobs=args.jobs, resume=args.resume)
        elif args.command == "eval":
            harness.cmd_eval(cfg)
        elif args.command == "sample":
            harness.cmd_sample(cfg)
        elif args.command == "report":
            report = harness.cmd_report(cfg)
            print(f"headline: {report['headline']['status']}")
            for gap in report["gaps"]:
                print(f"gap: {gap}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MissingInputError, ReportError) as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
