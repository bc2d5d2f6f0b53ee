#!/usr/bin/env python3
"""Run every experiment config through the CLI and report exit codes.

Usage::

    python3 scripts/run_experiments.py [--preset desk|paper] [--workers N] [--out results]

Each config in ``configs/`` whose dataset is present is run with the given
preset; outputs land in ``<out>/<config stem>/``. The script exits with the
largest exit code seen.
"""
from __future__ import annotations

import argparse
import configparser
import os
import time
from pathlib import Path

from interference_bandits.cli import main as cli_main

ROOT = Path(__file__).resolve().parent.parent
SUBCOMMANDS = {"regret": "regret", "coverage_beta": "coverage-beta", "coverage_v": "coverage-v",
               "movielens": "movielens"}


def dataset_present(parser: configparser.ConfigParser) -> bool:
    if "movielens" not in parser:
        return True
    return all((ROOT / parser["movielens"].get(k, "")).is_file() for k in ("ratings", "users"))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", choices=("desk", "paper"), default="desk")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path, default=ROOT / "results")
    ap.add_argument("--configs", type=Path, nargs="*",
                    default=sorted((ROOT / "configs").glob("*.ini")))
    args = ap.parse_args(argv)
    configs = [p.resolve() for p in args.configs]
    out = args.out.resolve()
    # dataset paths in the configs are relative to the repository root
    os.chdir(ROOT)
    worst = 0
    for path in configs:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
        parser.read(path)
        kind = parser.get("experiment", "kind", fallback="")
        if kind not in SUBCOMMANDS:
            print(f"skip {path.name}: unknown kind {kind!r}")
            continue
        if not dataset_present(parser):
            print(f"skip {path.name}: dataset files not found")
            continue
        start = time.perf_counter()
        code = cli_main([SUBCOMMANDS[kind], "--config", str(path), "--preset", args.preset,
                         "--workers", str(args.workers), "--out", str(out / path.stem),
                         "--gnuplot"])
        print(f"== {path.name}: exit {code} ({time.perf_counter() - start:.0f}s)\n")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    raise SystemExit(main())
