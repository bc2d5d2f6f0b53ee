"""Finite-sample checks of the theory: tail bound, consistency, regret growth,
exploration decay and double robustness.

Each study runs seeded replications through :func:`experiments.simulate`
and returns plain arrays or dicts; the acceptance suite and
``scripts/theory_checks.py`` share them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import estimator as est
from .domain import BetaVector, BoundConstants
from .environment import EnvironmentConfig, gen_round, monte_carlo_v_star
from .experiments import simulate
from .policies import PolicyConfig
from .value_estimation import sigma_v_estimate


def l1_error(beta_hat: BetaVector, beta: BetaVector) -> float:
    return float(np.abs(beta_hat.stacked - beta.stacked).sum())


# ---------------------------------------------------------------------------
# estimation error


@dataclass
class TailStudy:
    h_grid: np.ndarray
    observed: np.ndarray
    bound: np.ndarray
    n_bar: np.ndarray

    @property
    def slack(self) -> np.ndarray:
        """``bound - observed``; the check wants this >= -0.05 everywhere."""
        return self.bound - self.observed


def empirical_bound_constants(env: EnvironmentConfig, rng: np.random.Generator,
                              rounds: int = 2000) -> BoundConstants:
    """``L_x`` and ``L_w`` as the largest context norm and absolute row sum seen in sampled rounds."""
    l_x = l_w = 0.0
    for t in range(rounds):
        rnd = gen_round(env, rng, t + 1)
        l_x = max(l_x, float(np.linalg.norm(rnd.contexts, axis=1).max()))
        l_w = max(l_w, float(np.abs(rnd.interference).sum(axis=1).max()))
    return BoundConstants(l_x=l_x, l_w=l_w, lambda_min=1.0, u_bound=1.0, gamma=1.0,
                          sigma=env.sigma if env.sigma > 0 else 1.0)


def tail_study(env: EnvironmentConfig, pc: PolicyConfig, reps: int, h_grid: Sequence[float],
               consts: BoundConstants, master_seed: int = 0) -> TailStudy:
    """Observed ``P(|beta_hat - beta|_1 > h)`` against the tail bound at each replicate's ``n_bar``."""
    h_grid = np.asarray(h_grid, dtype=float)
    errors = np.empty(reps)
    bounds = np.empty((reps, h_grid.size))
    n_bar = np.empty(reps, dtype=int)
    for rep in range(reps):
        tr = simulate(env, pc, master_seed, rep)
        state = tr.agent.state
        errors[rep] = l1_error(est.solve_beta(state), tr.beta)
        n_bar[rep] = state.n_bar
        bounds[rep] = [est.tail_bound(h, state, pc.clipping, consts, env.d) for h in h_grid]
    observed = (errors[:, None] > h_grid[None, :]).mean(axis=0)
    return TailStudy(h_grid, observed, bounds.mean(axis=0), n_bar)


def consistency_sweep(env: EnvironmentConfig, pc: PolicyConfig, reps: int,
                      n_targets: Sequence[int], master_seed: int = 0) -> np.ndarray:
    """Median ``|beta_hat - beta|_1`` once ``n_bar`` first reaches each target."""
    lam = env.poisson_lambda
    horizon = int(math.ceil(max(n_targets) / lam * 1.2)) + 10
    errs = np.full((reps, len(n_targets)), np.nan)
    for rep in range(reps):
        hits = {}

        def snap(agent, envr, t, hits=hits):
            n = agent.state.n_bar
            for k, target in enumerate(n_targets):
                if k not in hits and n >= target:
                    hits[k] = l1_error(est.solve_beta(agent.state), envr.beta)
            return None

        simulate(env, pc, master_seed, rep, checkpoints=range(1, horizon + 1),
                 on_checkpoint=snap, horizon=horizon)
        for k, v in hits.items():
            errs[rep, k] = v
    return np.nanmedian(errs, axis=0)


# ---------------------------------------------------------------------------
# regret growth


def regret_growth(env: EnvironmentConfig, pc: PolicyConfig, seeds: int,
                  n_targets: Sequence[int], master_seed: int = 0) -> tuple:
    """Median cumulative regret and ``R / n_bar`` at the first round reaching each target."""
    horizon = int(math.ceil(max(n_targets) / env.poisson_lambda * 1.2)) + 10
    cum = np.empty((seeds, len(n_targets)))
    nb = np.empty((seeds, len(n_targets)))
    for s in range(seeds):
        tr = simulate(env, pc, master_seed, s, horizon=horizon)
        c = np.cumsum(tr.regrets)
        n = np.cumsum(tr.n_units)
        for k, target in enumerate(n_targets):
            idx = int(np.searchsorted(n, target))
            if idx >= n.size:
                raise RuntimeError("horizon too short for the largest target")
            cum[s, k], nb[s, k] = c[idx], n[idx]
    med = np.median(cum, axis=0)
    return med, med / np.median(nb, axis=0)


# ---------------------------------------------------------------------------
# exploration


@dataclass
class ExplorationRun:
    first_quartile: float
    last_quartile: float
    kappa_final: float
    expected: np.ndarray  # per tracked unit: probability of disagreeing with pi_hat
    flags: np.ndarray

    @property
    def decreased(self) -> bool:
        return self.last_quartile < self.first_quartile


def exploration_run(env: EnvironmentConfig, pc: PolicyConfig, master_seed: int,
                    rep: int) -> ExplorationRun:
    """Windowed disagreement rates of one run, plus the nominal disagreement probabilities.

    A selection round under epsilon-greedy disagrees with ``pi_hat`` with
    probability ``eps / 2``; a clipped round with probability ``1/2``. Other
    rules have no closed form, so their entries are NaN.
    """
    tr = simulate(env, pc, master_seed, rep)
    tracker = tr.agent.tracker
    expected = []
    for mode, n, eps in zip(tr.modes, tr.n_units, tr.epsilons):
        if mode == "burnin":
            continue
        if mode == "clipped":
            expected.append(np.full(n, 0.5))
        elif eps is not None:
            expected.append(np.asarray(eps, dtype=float) / 2)
        else:
            expected.append(np.full(n, np.nan))
    expected = np.concatenate(expected) if expected else np.zeros(0)
    return ExplorationRun(tracker.windowed_rate(0.0, 0.25), tracker.windowed_rate(0.75, 1.0),
                          tracker.kappa, expected, tracker.tracked_flags())


def quartile_means(values: np.ndarray) -> np.ndarray:
    """Means over the four consecutive quarters of ``values`` (same cut as the tracker)."""
    n = values.size
    cuts = [int(q * n) for q in (0.0, 0.25, 0.5, 0.75, 1.0)]
    return np.array([values[cuts[k]:cuts[k + 1]].mean() for k in range(4)])


# ---------------------------------------------------------------------------
# double robustness


@dataclass
class RobustnessStudy:
    """Bias of the DR estimate in units of its per-run standard error."""

    v_star: float
    clean: float
    kappa_corrupt: float
    mu_corrupt: float
    both_corrupt: float
    n_bar: float


def dr_with(log, kappa, mu) -> float:
    a, pi, r = log.column("action"), log.column("pi_hat"), log.column("reward")
    w = (a == pi) / (1.0 - np.minimum(kappa, 0.99))
    return float(np.mean(w * (r - mu) + mu))


def robustness_study(env: EnvironmentConfig, pc: PolicyConfig, reps: int,
                     kappa_bad: float = 0.4, mu_shift: float = 1.0, master_seed: int = 0,
                     mc_samples: int = 1_000_000) -> RobustnessStudy:
    """DR bias with the propensity, the outcome model, or both replaced by wrong values.

    The wrong propensity is a constant ``kappa_bad``; the wrong outcome model
    adds ``mu_shift`` to every coefficient of the running estimate.
    """
    beta = env.draw_beta(np.random.default_rng([master_seed, 2**31 - 1]))
    v_star, _ = monte_carlo_v_star(env, beta, mc_samples,
                                   np.random.default_rng([master_seed, 2**31 - 2]))
    sums = np.zeros(4)
    ses = []
    nbs = []
    for rep in range(reps):
        tr = simulate(env, pc, master_seed, rep, beta=beta)
        log = tr.agent.finalize_log()
        kap = log.kappa()
        mu = log.column("mu_hat")
        mu_bad = mu + mu_shift * log.column("xt_row_pihat").sum(axis=1)
        k_bad = np.full(len(log), kappa_bad)
        est_vals = [dr_with(log, kap, mu), dr_with(log, k_bad, mu),
                    dr_with(log, kap, mu_bad), dr_with(log, k_bad, mu_bad)]
        sums += np.array(est_vals) - v_star
        sigma = pc.sigma if pc.sigma is not None else env.sigma
        ses.append(sigma_v_estimate(log, sigma) / math.sqrt(len(log)))
        nbs.append(len(log))
    z = sums / reps / float(np.mean(ses))
    return RobustnessStudy(v_star, *z, n_bar=float(np.mean(nbs)))
