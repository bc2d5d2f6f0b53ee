"""Command-line entry point.

Exit codes: 0 success, 1 config error, 2 runtime error, 3 a gating check
(coverage band, dominance, MovieLens ordering) failed.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, apply_preset, default_config, load_config
from .experiments import run_experiment, write_result

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_THRESHOLD = 0, 1, 2, 3

COMMANDS = {"regret": "regret", "coverage-beta": "coverage_beta", "coverage-v": "coverage_v",
            "movielens": "movielens"}

log = logging.getLogger("interference_bandits")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="interference-bandits",
        description="Contextual bandits under interference: simulation experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="experiment config file (INI)")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--workers", type=int, help="worker processes for replications")
        p.add_argument("--out", type=Path, help="output directory (overrides the config)")
        p.add_argument("--preset", choices=("desk", "paper"), help="scale preset")
        p.add_argument("--gnuplot", action="store_true",
                       help="also write a whitespace-separated summary .dat file")
        p.add_argument("--no-gate", action="store_true",
                       help="exit 0 even if a gating check fails")
    v = sub.add_parser("validate-config")
    v.add_argument("--config", type=Path, required=True)
    return parser


def _load(path: Path, kind: str, strict: bool):
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    cfg, unknown = load_config(text, strict=strict)
    for key in unknown:
        log.warning("ignoring unknown config key %s", key)
    if kind and cfg.kind != kind:
        raise ConfigError(f"config kind {cfg.kind!r} does not match subcommand {kind!r}")
    return cfg


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "validate-config":
        try:
            cfg = _load(args.config, "", strict=True)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"ok: {cfg.kind}, {len(cfg.policies)} policies, {cfg.replications} replications")
        return EXIT_OK

    kind = COMMANDS[args.command]
    try:
        cfg = _load(args.config, kind, strict=False) if args.config else default_config(kind)
        if args.preset:
            cfg = apply_preset(cfg, args.preset)
        overrides = {}
        if args.seed is not None:
            overrides["master_seed"] = args.seed
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("--workers must be >= 1")
            overrides["workers"] = args.workers
        if args.out is not None:
            overrides["output_dir"] = str(args.out)
        cfg = replace(cfg, **overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        result = run_experiment(cfg)
        paths = write_result(result, cfg.output_dir, gnuplot=args.gnuplot)
    except (OSError, ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for p in paths:
        print(f"wrote {p}")
    for name, ok in result.checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    if not result.passed and not args.no_gate:
        return EXIT_THRESHOLD
    return EXIT_OK
