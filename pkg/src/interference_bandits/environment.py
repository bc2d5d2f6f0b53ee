"""Synthetic environments: unit arrivals, contexts, interference and rewards.

Presets reproduce the simulation designs used for coverage (``a1_beta``,
``a1_value``) and regret comparison (``a2_regret``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Sequence

import numpy as np

from .domain import BetaVector, Round, oracle_action


@dataclass(frozen=True)
class ContextSpec:
    """One feature's law: ``constant(c)``, ``normal(mean, variance)`` or ``uniform(lo, hi)``."""

    kind: str
    a: float = 0.0
    b: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "normal", "uniform"):
            raise ValueError(f"unknown context law {self.kind!r}")
        if self.kind == "normal" and self.b < 0:
            raise ValueError("normal variance must be >= 0")
        if self.kind == "uniform" and self.b < self.a:
            raise ValueError("uniform bounds must be ordered")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "constant":
            return np.full(n, float(self.a))
        if self.kind == "normal":
            return rng.normal(self.a, math.sqrt(self.b), size=n)
        return rng.uniform(self.a, self.b, size=n)

    @property
    def mean(self) -> float:
        return self.a if self.kind in ("constant", "normal") else 0.5 * (self.a + self.b)

    def __str__(self):
        if self.kind == "constant":
            return f"constant({self.a:g})"
        return f"{self.kind}({self.a:g}, {self.b:g})"


@dataclass(frozen=True)
class InterferenceSpec:
    """Identity, or off-diagonals from ``p U(neg_lo, neg_hi) + (1-p) U(pos_lo, pos_hi)``."""

    kind: str = "identity"
    neg_lo: float = 0.0
    neg_hi: float = 0.0
    pos_lo: float = 0.0
    pos_hi: float = 0.0
    symmetric: bool = True
    neg_prob: float = 0.5

    def __post_init__(self):
        if self.kind not in ("identity", "mixture"):
            raise ValueError(f"unknown interference spec {self.kind!r}")
        if self.kind == "mixture":
            if not (self.neg_lo <= self.neg_hi and self.pos_lo <= self.pos_hi):
                raise ValueError("mixture bounds must be ordered")
            if min(self.neg_lo, self.pos_lo) < -1 or max(self.neg_hi, self.pos_hi) > 1:
                raise ValueError("mixture support must lie inside [-1, 1]")

    def draw_offdiagonal(self, rng: np.random.Generator, size) -> np.ndarray:
        neg = rng.random(size) < self.neg_prob
        lo = np.where(neg, self.neg_lo, self.pos_lo)
        hi = np.where(neg, self.neg_hi, self.pos_hi)
        return lo + (hi - lo) * rng.random(size)

    def __str__(self):
        if self.kind == "identity":
            return "identity"
        mode = "symmetric" if self.symmetric else "asymmetric"
        return (f"mixture({self.neg_lo:g}, {self.neg_hi:g}, {self.pos_lo:g}, {self.pos_hi:g}, "
                f"{mode})")


@dataclass(frozen=True)
class EnvironmentConfig:
    horizon: int = 200
    poisson_lambda: float = 5.0
    contexts: tuple = ()
    w_spec: InterferenceSpec = field(default_factory=InterferenceSpec)
    beta0: Optional[tuple] = None
    beta1: Optional[tuple] = None
    beta0_range: Optional[tuple] = None
    beta1_range: Optional[tuple] = None
    sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.poisson_lambda > 0:
            raise ValueError("poisson_lambda must be positive")
        if not self.contexts:
            raise ValueError("at least one context feature is required")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        fixed = self.beta0 is not None and self.beta1 is not None
        ranged = self.beta0_range is not None and self.beta1_range is not None
        if not (fixed or ranged):
            raise ValueError("give beta0/beta1 or beta0_range/beta1_range")
        if fixed and (len(self.beta0) != self.d or len(self.beta1) != self.d):
            raise ValueError("beta length must match the number of context features")

    @property
    def d(self) -> int:
        return len(self.contexts)

    def draw_beta(self, rng: np.random.Generator) -> BetaVector:
        if self.beta0 is not None and self.beta1 is not None:
            return BetaVector(np.array(self.beta0, float), np.array(self.beta1, float))
        b0 = rng.uniform(*self.beta0_range, size=self.d)
        b1 = rng.uniform(*self.beta1_range, size=self.d)
        return BetaVector(b0, b1)

    def with_identity(self) -> "EnvironmentConfig":
        return replace(self, w_spec=InterferenceSpec("identity"))


def a1_beta(**overrides) -> EnvironmentConfig:
    """Coverage design for the coefficient: Poisson(5) units, mixture on [-.6,-.3] / [.1,.4]."""
    cfg = EnvironmentConfig(
        horizon=200,
        poisson_lambda=5.0,
        contexts=(ContextSpec("constant", 1.0), ContextSpec("normal", 4.0, 1.0),
                  ContextSpec("uniform", 0.0, 3.0)),
        w_spec=InterferenceSpec("mixture", -0.6, -0.3, 0.1, 0.4, symmetric=True),
        beta0=(2.0, -3.0, 1.0),
        beta1=(1.0, 1.0, 3.0),
        sigma=1.0,
    )
    return replace(cfg, **overrides)


def a1_value(**overrides) -> EnvironmentConfig:
    """Coverage design for the optimal value: weaker, asymmetric interference and small contexts."""
    cfg = EnvironmentConfig(
        horizon=200,
        poisson_lambda=5.0,
        contexts=(ContextSpec("constant", 0.2), ContextSpec("normal", 0.8, 0.04),
                  ContextSpec("uniform", 0.0, 0.6)),
        w_spec=InterferenceSpec("mixture", -0.2, -0.1, 0.05, 0.2, symmetric=False),
        beta0=(2.0, -3.0, 1.0),
        beta1=(1.0, 1.0, 3.0),
        sigma=0.5,
    )
    return replace(cfg, **overrides)


def a2_regret(**overrides) -> EnvironmentConfig:
    """Regret-comparison design: strong negative interference, d = 5, random coefficients."""
    cfg = EnvironmentConfig(
        horizon=100,
        poisson_lambda=5.0,
        contexts=(ContextSpec("constant", 1.0), ContextSpec("normal", 0.0, 1.0),
                  ContextSpec("normal", 0.0, 1.0), ContextSpec("uniform", 0.0, 1.0),
                  ContextSpec("uniform", 0.0, 1.0)),
        w_spec=InterferenceSpec("mixture", -0.9, -0.6, 0.1, 0.4, symmetric=True),
        beta0_range=(1.0, 3.0),
        beta1_range=(-2.0, 5.0),
        sigma=1.0,
    )
    return replace(cfg, **overrides)


PRESETS = {"a1_beta": a1_beta, "a1_value": a1_value, "a2_regret": a2_regret}


def gen_interference_matrix(w_spec: InterferenceSpec, n: int, rng: np.random.Generator):
    w = np.eye(n)
    if w_spec.kind == "identity" or n == 1:
        return w
    iu = np.triu_indices(n, k=1)
    upper = w_spec.draw_offdiagonal(rng, iu[0].size)
    w[iu] = upper
    if w_spec.symmetric:
        w[iu[1], iu[0]] = upper
    else:
        w[iu[1], iu[0]] = w_spec.draw_offdiagonal(rng, iu[0].size)
    return w


def sample_contexts(config: EnvironmentConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    return np.column_stack([spec.sample(rng, n) for spec in config.contexts])


def gen_round(config: EnvironmentConfig, rng: np.random.Generator, t: int) -> Round:
    n = max(1, int(rng.poisson(config.poisson_lambda)))
    x = sample_contexts(config, rng, n)
    w = gen_interference_matrix(config.w_spec, n, rng)
    return Round(t, x, w)


def mean_rewards(contexts, interference, actions, beta: BetaVector) -> np.ndarray:
    """``sum_j W_ij x_j' beta_{a_j}`` computed from the definition."""
    f = np.where(np.asarray(actions) == 1, contexts @ beta.beta1, contexts @ beta.beta0)
    return interference @ f


def realize_rewards(rnd: Round, beta: BetaVector, sigma: float, rng: np.random.Generator):
    if rnd.actions is None:
        from .domain import MissingActionsError

        raise MissingActionsError("rewards need actions")
    return realize(rnd.contexts, rnd.interference, rnd.actions, beta, sigma, rng)


def realize(contexts, interference, actions, beta, sigma, rng) -> np.ndarray:
    mu = mean_rewards(contexts, interference, actions, beta)
    # always consume the noise draws so paired runs stay aligned
    noise = rng.standard_normal(mu.size)
    return mu + sigma * noise


class SyntheticEnvironment:
    """Round generator plus reward oracle for one replication."""

    def __init__(self, config: EnvironmentConfig, rng: np.random.Generator,
                 beta: Optional[BetaVector] = None):
        self.config = config
        self.rng = rng
        self.beta = config.draw_beta(rng) if beta is None else beta

    def rounds(self, horizon: Optional[int] = None) -> Iterator[Round]:
        for t in range(1, (horizon or self.config.horizon) + 1):
            yield gen_round(self.config, self.rng, t)

    def reward_fn(self, rnd: Round):
        def fn(actions):
            return realize(rnd.contexts, rnd.interference, actions, self.beta,
                           self.config.sigma, self.rng)
        return fn


def _omega_draws(config: EnvironmentConfig, n_units: np.ndarray, rng) -> np.ndarray:
    """Marginal interference weights for units in rounds of the given sizes."""
    sizes = np.repeat(n_units, n_units)
    if config.w_spec.kind == "identity":
        return np.ones(sizes.size)
    k = sizes - 1
    draws = config.w_spec.draw_offdiagonal(rng, int(k.sum()))
    csum = np.concatenate([[0.0], np.cumsum(draws)])
    ends = np.cumsum(k)
    return 1.0 + csum[ends] - csum[ends - k]


def monte_carlo_v_star(config: EnvironmentConfig, beta: BetaVector, m_samples: int,
                       rng: np.random.Generator, chunk: int = 100_000) -> tuple[float, float]:
    """Monte Carlo ``V*``: mean optimal per-unit value ``omega x' beta_{pi*}``.

    ``m_samples`` rounds are drawn; each unit's weight is the column sum of
    its round's matrix. Within a column the off-diagonal entries are i.i.d.
    under either mixture mode, so weights are drawn from that marginal
    directly instead of materializing every matrix.
    """
    if m_samples < 1000:
        raise ValueError("m_samples must be >= 1000")
    total = total_sq = 0.0
    count = 0
    remaining = m_samples
    while remaining > 0:
        m = min(chunk, remaining)
        remaining -= m
        n_units = np.maximum(1, rng.poisson(config.poisson_lambda, size=m))
        x = sample_contexts(config, rng, int(n_units.sum()))
        omega = _omega_draws(config, n_units, rng)
        best = oracle_action(omega, x, beta)
        val = omega * np.where(best == 1, x @ beta.beta1, x @ beta.beta0)
        total += val.sum()
        total_sq += (val**2).sum()
        count += val.size
    mean = total / count
    var = max(total_sq / count - mean**2, 0.0)
    return float(mean), float(math.sqrt(var / count))
