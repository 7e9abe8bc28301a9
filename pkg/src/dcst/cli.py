"""Command-line entry point: ``dcst <stage> [--config ...] [--seed ...] [--out ...] [--ablation ...]``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import config as cfgmod
from .diffcore import ConfigError
from .model import AblationMode
from .pipeline import STAGES, run

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in an unsigned 64-bit integer, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcst", description="Traffic forecasting experiments.")
    sub = parser.add_subparsers(dest="stage", required=True)
    for name in STAGES:
        p = sub.add_parser(name)
        p.add_argument("--config", help="experiment config JSON (defaults apply when omitted)")
        p.add_argument("--seed", type=_seed, help="overrides the config seed")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--ablation", choices=[m.value for m in AblationMode], help="student ablation mode")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with exit status 2
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = cfgmod.load(args.config) if args.config else cfgmod.ExperimentConfig()
        config = config.with_overrides(seed=args.seed, out=args.out, ablation=args.ablation)
        config.validate()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        paths = run(config, args.stage)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - every stage failure maps to one exit code
        print(f"{args.stage} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
