#!/usr/bin/env python3
"""Finite-sample checks of the estimator and policy theory.

Runs the tail-bound, consistency, regret-growth, exploration-decay and
double-robustness studies and prints one block per study. Scale is set by
``--reps``/``--seeds``; the defaults match the acceptance suite.

Usage::

    python3 scripts/theory_checks.py [--only tail,growth,...] [--reps 200] [--seeds 20]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from interference_bandits import studies
from interference_bandits.environment import a1_beta, a1_value, a2_regret
from interference_bandits.policies import PolicyConfig

STUDIES = ("tail", "consistency", "growth", "exploration", "robustness")


def run_tail(args):
    env = a1_beta()
    consts = studies.empirical_bound_constants(env, np.random.default_rng(7))
    h_grid = np.geomspace(0.01, 1e5, 15)
    res = studies.tail_study(env, PolicyConfig("EG", sigma=env.sigma), args.reps, h_grid, consts)
    print(f"L_x = {consts.l_x:.3f}, L_w = {consts.l_w:.3f}, median n_bar = {np.median(res.n_bar):.0f}")
    print(f"{'h':>10} {'observed':>9} {'bound':>9}")
    for h, o, b in zip(h_grid, res.observed, res.bound):
        print(f"{h:10.3g} {o:9.3f} {b:9.3f}")


def run_consistency(args):
    env = a1_beta()
    targets = (250, 500, 1000, 2000, 4000)
    for algo in ("EG", "UCB", "TS"):
        med = studies.consistency_sweep(env, PolicyConfig(algo, sigma=env.sigma), args.seeds,
                                        targets)
        print(f"{algo:4s} median |beta_hat - beta|_1 at n_bar {targets}: {np.round(med, 4)}")


def run_growth(args):
    targets = (1000, 2000, 4000, 8000)
    for name, env in (("A.1", a1_beta()), ("A.2", a2_regret())):
        for algo in ("EG", "UCB", "TS"):
            med, rate = studies.regret_growth(env, PolicyConfig(algo, sigma=env.sigma), args.seeds,
                                              targets)
            print(f"{name} {algo:4s} median R {np.round(med, 2)}  R/n_bar {np.round(rate, 4)}")


def run_exploration(args):
    env = a1_beta(horizon=400)
    for label, pc in (("UCB alpha=200", PolicyConfig("UCB", alpha=200.0, sigma=1.0)),
                      ("TS v=50", PolicyConfig("TS", v=50.0, sigma=1.0)),
                      ("UCB alpha=1", PolicyConfig("UCB", sigma=1.0))):
        runs = [studies.exploration_run(env, pc, 0, s) for s in range(args.seeds)]
        dec = sum(r.decreased for r in runs)
        q1 = np.mean([r.first_quartile for r in runs])
        q4 = np.mean([r.last_quartile for r in runs])
        print(f"{label:14s} decreasing in {dec}/{len(runs)} seeds; mean kappa Q1 {q1:.4f} Q4 {q4:.4f}")
    runs = [studies.exploration_run(env, PolicyConfig("EG", sigma=1.0), 0, s)
            for s in range(args.seeds)]
    flags = np.concatenate([r.flags for r in runs]).astype(float)
    expected = np.concatenate([r.expected for r in runs])
    gaps = [abs(r.flags.mean() - r.expected.mean()) for r in runs]
    print(f"EG per-seed max |kappa - eps/2| {max(gaps):.4f}")
    print(f"EG quartile kappa    {np.round(studies.quartile_means(flags), 4)}")
    print(f"EG quartile eps/2    {np.round(studies.quartile_means(expected), 4)}")


def run_robustness(args):
    env = a1_value(horizon=2000)
    res = studies.robustness_study(env, PolicyConfig("EG", eg_constant=0.05, sigma=env.sigma),
                                   reps=10)
    print(f"V* = {res.v_star:.4f}, mean n_bar = {res.n_bar:.0f}; bias in standard errors:")
    for name in ("clean", "kappa_corrupt", "mu_corrupt", "both_corrupt"):
        print(f"  {name:14s} {getattr(res, name):+8.2f}")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--only", default=",".join(STUDIES),
                        help=f"comma-separated subset of {', '.join(STUDIES)}")
    parser.add_argument("--reps", type=int, default=200, help="replicates for the tail study")
    parser.add_argument("--seeds", type=int, default=20, help="seeds for the other studies")
    args = parser.parse_args(argv)
    chosen = [s.strip() for s in args.only.split(",") if s.strip()]
    unknown = set(chosen) - set(STUDIES)
    if unknown:
        parser.error(f"unknown studies: {', '.join(sorted(unknown))}")
    for name in chosen:
        start = time.perf_counter()
        print(f"== {name}")
        globals()[f"run_{name}"](args)
        print(f"   ({time.perf_counter() - start:.1f}s)\n")


if __name__ == "__main__":
    main()
