"""Interference-aware exploration policies and the online round loop.

Three selection rules share one loop: epsilon-greedy, UCB and Thompson
sampling, each deciding by ``omega_i * x_i' beta_a``. The ``Classical*``
variants run the identical loop but see ``W = I`` (so ``omega = 1`` and the
transform keeps only each unit's own context); rewards are still realized
under the true interference by the environment.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from . import estimator as est
from .domain import BetaVector, Round, oracle_action, transform_covariates
from .value_estimation import EvaluationLog

ALGORITHMS = ("EG", "UCB", "TS", "ClassicalEG", "ClassicalUCB", "ClassicalTS", "Oracle")
JITTER = 1e-10


class SamplingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# schedules


def eg_epsilon(q, c: float = 1.0):
    """Exploration probability ``min(1, c log(q+1) / sqrt(q+1))`` for unit index ``q >= 1``."""
    q = np.asarray(q, dtype=float)
    eps = np.minimum(1.0, c * np.log(q + 1.0) / np.sqrt(q + 1.0))
    return float(eps) if eps.ndim == 0 else eps


def ucb_clip_rate(n_bar: float, u: float = 1.0, gamma: float = 2.0) -> float:
    """Clipping rate ``n_bar ** (u/gamma - 1)`` balancing UCB's margin term."""
    if n_bar <= 1:
        return 1.0
    return min(1.0, n_bar ** (u / gamma - 1.0))


def ts_clip_rate(q: float, n_bar: float, alpha: float) -> float:
    """Clipping rate ``sqrt(alpha log q / n_bar)`` for Thompson sampling."""
    if q <= 1 or n_bar <= 0:
        return 1.0
    return min(1.0, math.sqrt(alpha * math.log(q) / n_bar))


def default_burn_in(d: int, mean_units: float) -> int:
    return max(5, math.ceil(4 * d / mean_units))


def kappa_bound_ucb(n_bar, p, alpha, xi, consts, d, margin_c: float = 1.0) -> float:
    """Upper bound on UCB's exploration probability (``margin_c`` is the margin constant)."""
    margin = margin_c * (
        2 * alpha * consts.l_w * consts.l_x / math.sqrt(n_bar * p * consts.lambda_min) + xi
    ) ** consts.gamma
    tail = 8 * d * math.exp(
        -(xi**2) * n_bar * p**2 / (64 * d**3 * consts.sigma**2 * consts.l_w**4 * consts.l_x**4)
    )
    return min(1.0, margin + tail)


def kappa_bound_ts(n_bar, p, v, zeta, xi, consts, d) -> float:
    if not 0 < xi < abs(zeta) / 2:
        raise ValueError("need 0 < xi < |zeta| / 2")
    first = math.exp(
        -n_bar * p * consts.lambda_min * (abs(zeta) - xi) ** 2
        / (4 * v**2 * consts.l_w**2 * consts.l_x**2)
    )
    tail = 8 * d * math.exp(
        -(xi**2) * n_bar * p**2 / (64 * d**3 * consts.sigma**2 * consts.l_w**4 * consts.l_x**4)
    )
    return min(1.0, first + tail)


# ---------------------------------------------------------------------------
# selection rules (scalar or vectorized over the units of a round)


def _argmax2(score0, score1):
    # ties -> arm 0
    out = np.asarray(score1) > np.asarray(score0)
    return int(out) if out.ndim == 0 else out.astype(np.int8)


def eg_select(omega, x, beta_hat: BetaVector, eps, rng: np.random.Generator):
    omega = np.asarray(omega, dtype=float)
    x = np.asarray(x, dtype=float)
    greedy = oracle_action(omega, x, beta_hat)
    shape = omega.shape
    explore = rng.random(shape) < eps
    uniform = rng.integers(0, 2, size=shape)
    out = np.where(explore, uniform, greedy)
    return int(out) if out.ndim == 0 else out.astype(np.int8)


@dataclass
class DiagnosticCounters:
    negative_quadform: int = 0
    kappa_clamped: int = 0


def ucb_select(omega, x, beta_hat: BetaVector, cov_blocks, alpha: float, counters=None):
    """Optimistic choice between ``omega x'b_a + alpha |omega| sqrt(x' B_a x)``."""
    omega = np.asarray(omega, dtype=float)
    x = np.asarray(x, dtype=float)
    scores = []
    for a, block in enumerate(cov_blocks):
        quad = np.einsum("...i,ij,...j->...", x, block, x)
        neg = quad < 0
        if np.any(neg):
            if counters is not None:
                counters.negative_quadform += int(np.sum(neg))
            quad = np.where(neg, 0.0, quad)
        scores.append(omega * (x @ beta_hat.arm(a)) + alpha * np.abs(omega) * np.sqrt(quad))
    return _argmax2(*scores)


def ts_posterior(state: est.EstimatorState, prior_mean, prior_cov, sigma: float):
    """Conjugate normal posterior ``(mean, cov)`` of the stacked coefficient."""
    prior_mean = np.asarray(prior_mean, dtype=float)
    prior_cov = np.asarray(prior_cov, dtype=float)
    try:
        prior_factor = linalg.cho_factor(prior_cov, lower=True)
    except linalg.LinAlgError as exc:
        raise ValueError("prior covariance must be symmetric positive definite") from exc
    k = prior_cov.shape[0]
    prior_prec = linalg.cho_solve(prior_factor, np.eye(k))
    precision = prior_prec + state.gram / sigma**2
    precision = 0.5 * (precision + precision.T)
    factor = linalg.cho_factor(precision, lower=True)
    rhs = linalg.cho_solve(prior_factor, prior_mean) + state.moment / sigma**2
    mean = linalg.cho_solve(factor, rhs)
    cov = linalg.cho_solve(factor, np.eye(k))
    return mean, 0.5 * (cov + cov.T)


def _block_factor(block: np.ndarray) -> np.ndarray:
    k = block.shape[0]
    try:
        return np.linalg.cholesky(block + JITTER * np.eye(k))
    except np.linalg.LinAlgError as exc:
        raise SamplingError("posterior block is not positive semidefinite") from exc


def ts_select(omega, x, posterior, v: float, rng: np.random.Generator):
    """Sample each arm's coefficient from its own posterior block (cross-arm covariance dropped)."""
    mean, cov = posterior
    omega = np.asarray(omega, dtype=float)
    x = np.asarray(x, dtype=float)
    d = mean.size // 2
    n = omega.size
    scores = []
    for a in (0, 1):
        sl = slice(a * d, (a + 1) * d)
        chol = _block_factor(v**2 * cov[sl, sl])
        z = rng.standard_normal((n, d))
        draws = mean[sl] + z @ chol.T
        xa = x.reshape(n, d)
        scores.append(omega.reshape(n) * np.einsum("ij,ij->i", xa, draws))
    out = _argmax2(*scores)
    return int(out[0]) if omega.ndim == 0 else out


# ---------------------------------------------------------------------------
# configuration and tracking


@dataclass
class PolicyConfig:
    algorithm: str = "EG"
    t0: int = 5
    alpha: float = 1.0
    v: float = 1.0
    prior_mean: Optional[np.ndarray] = None
    prior_cov: Optional[np.ndarray] = None
    eg_c: float = 1.0
    eg_constant: Optional[float] = None
    clipping: est.ClippingSchedule = field(default_factory=est.ClippingSchedule)
    sigma: Optional[float] = None
    seed: int = 0
    k_arms: int = 2

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; pick from {ALGORITHMS}")
        if self.k_arms != 2:
            raise ValueError("only two arms are supported")
        if self.alpha < 0 or not self.v > 0 or self.t0 < 1:
            raise ValueError("need alpha >= 0, v > 0, t0 >= 1")
        if self.prior_cov is not None:
            pc = np.asarray(self.prior_cov, dtype=float)
            if not np.allclose(pc, pc.T) or np.linalg.eigvalsh(pc)[0] <= 0:
                raise ValueError("prior_cov must be symmetric positive definite")
        if self.eg_constant is not None and not 0 <= self.eg_constant <= 1:
            raise ValueError("eg_constant must be a probability")

    @property
    def base(self) -> str:
        return self.algorithm.replace("Classical", "")

    @property
    def interference_aware(self) -> bool:
        return not self.algorithm.startswith("Classical")

    def epsilon(self, q):
        if self.eg_constant is not None:
            return np.full(np.shape(q), self.eg_constant, dtype=float)
        return eg_epsilon(q, self.eg_c)


@dataclass
class ExplorationTracker:
    """Running disagreement rate between actions and the estimated-optimal arm."""

    disagreements: int = 0
    total: int = 0
    flags: list = field(default_factory=list)
    per_checkpoint: list = field(default_factory=list)

    @property
    def kappa(self) -> float:
        return self.disagreements / self.total if self.total else 0.0

    def seed(self, disagreements: int, total: int):
        self.disagreements += int(disagreements)
        self.total += int(total)

    def record(self, actions, pi_hat):
        f = np.asarray(actions) != np.asarray(pi_hat)
        self.flags.append(f)
        self.disagreements += int(f.sum())
        self.total += f.size
        self.per_checkpoint.append(self.kappa)

    def tracked_flags(self) -> np.ndarray:
        """Per-unit disagreement flags recorded after burn-in, in order."""
        return np.concatenate(self.flags) if self.flags else np.zeros(0, dtype=bool)

    def windowed_rate(self, lo: float, hi: float) -> float:
        f = self.tracked_flags()
        a, b = int(lo * f.size), int(hi * f.size)
        return float(f[a:b].mean()) if b > a else float("nan")


@dataclass
class RoundOutcome:
    actions: np.ndarray
    rewards: np.ndarray
    mode: str  # "burnin" | "clipped" | "select"
    pi_hat: Optional[np.ndarray]
    epsilon: Optional[np.ndarray] = None


class InterferenceBandit:
    """Algorithm 1 driver: one instance per simulation run."""

    def __init__(self, config: PolicyConfig, d: int, rng: Optional[np.random.Generator] = None):
        self.config = config
        self.d = d
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.state = est.EstimatorState(d)
        self.tracker = ExplorationTracker()
        self.log = EvaluationLog(d)
        self.counters = DiagnosticCounters()
        self.rounds_seen = 0
        self._pending: list = []  # units seen before the first estimate
        self.modes: list = []
        k = 2 * d
        self.prior_mean = (
            np.zeros(k) if config.prior_mean is None else np.asarray(config.prior_mean, float)
        )
        self.prior_cov = np.eye(k) if config.prior_cov is None else np.asarray(config.prior_cov, float)

    # -- views -------------------------------------------------------------
    def view(self, rnd: Round) -> np.ndarray:
        """Interference matrix as this policy sees it."""
        if self.config.interference_aware:
            return rnd.interference
        return np.eye(rnd.n_units)

    def sigma(self) -> float:
        if self.config.sigma is not None:
            return self.config.sigma
        try:
            s = est.sigma_hat(self.state)
        except (est.InsufficientData, est.EstimationNotReady):
            return 1.0
        return s if s > 0 else 1.0

    def current_beta(self) -> Optional[BetaVector]:
        if self.rounds_seen < self.config.t0:
            return None
        try:
            return est.solve_beta(self.state)
        except est.EstimationNotReady:
            return None

    # -- the loop ----------------------------------------------------------
    def select(self, rnd: Round, omega: np.ndarray, beta_hat: BetaVector):
        cfg = self.config
        x = rnd.contexts
        n = rnd.n_units
        eps = None
        if cfg.base == "EG":
            q = self.state.n_bar + np.arange(1, n + 1)
            eps = cfg.epsilon(q)
            actions = eg_select(omega, x, beta_hat, eps, self.rng)
        elif cfg.base == "UCB":
            inv = est.gram_inverse(self.state)
            blocks = est.arm_blocks(inv, self.d)
            actions = ucb_select(omega, x, beta_hat, blocks, cfg.alpha, self.counters)
        else:
            post = ts_posterior(self.state, self.prior_mean, self.prior_cov, self.sigma())
            actions = ts_select(omega, x, post, cfg.v, self.rng)
        return np.asarray(actions, dtype=np.int8), eps

    def run_round(self, rnd: Round, reward_fn: Callable[[np.ndarray], np.ndarray]) -> RoundOutcome:
        """Choose actions for ``rnd``, collect rewards, update the estimate."""
        w = self.view(rnd)
        omega = w.sum(axis=0)
        x = rnd.contexts
        n = rnd.n_units
        beta_hat = self.current_beta()
        pi_hat = None
        eps = None
        if beta_hat is None:
            mode = "burnin"
            actions = self.rng.integers(0, 2, size=n).astype(np.int8)
        else:
            pi_hat = oracle_action(omega, x, beta_hat)
            if self._pending:
                self._seed_tracker(beta_hat)
            if est.clipping_triggered(self.state, self.config.clipping):
                mode = "clipped"
                actions = self.rng.integers(0, 2, size=n).astype(np.int8)
            else:
                mode = "select"
                actions, eps = self.select(rnd, omega, beta_hat)

        rewards = np.asarray(reward_fn(actions), dtype=float)
        xt = transform_covariates(x, w, actions)

        if beta_hat is None:
            self._pending.append((omega, x, actions))
        else:
            kappa_snapshot = self.tracker.kappa
            xt_pihat = transform_covariates(x, w, pi_hat)
            mu_hat = xt_pihat @ beta_hat.stacked
            self.log.append_round(
                rnd.t, omega, x, actions, rewards, pi_hat, kappa_snapshot, mu_hat, xt_pihat
            )
            self.tracker.record(actions, pi_hat)

        est.absorb_round(self.state, xt, rewards, x)
        self.rounds_seen += 1
        self.modes.append(mode)
        return RoundOutcome(actions, rewards, mode, pi_hat, eps)

    def _seed_tracker(self, beta_hat: BetaVector):
        # kappa before any tracked unit = disagreement rate of the burn-in units
        dis = tot = 0
        for omega, x, actions in self._pending:
            dis += int(np.sum(actions != oracle_action(omega, x, beta_hat)))
            tot += actions.size
        self.tracker.seed(dis, tot)
        self._pending = []

    def finalize_log(self) -> EvaluationLog:
        """The decision log with the final estimate and exploration rate attached."""
        self.log.final_beta = self.current_beta()
        self.log.final_kappa = self.tracker.kappa
        return self.log


class OracleAgent:
    """Plays the true optimal arm for every unit; the regret baseline."""

    def __init__(self, beta: BetaVector, d: int):
        self.beta = beta
        self.d = d
        self.state = est.EstimatorState(d)
        self.modes: list = []

    def run_round(self, rnd: Round, reward_fn) -> RoundOutcome:
        omega = rnd.interference.sum(axis=0)
        actions = oracle_action(omega, rnd.contexts, self.beta)
        rewards = np.asarray(reward_fn(actions), dtype=float)
        est.absorb_round(
            self.state, transform_covariates(rnd.contexts, rnd.interference, actions),
            rewards, rnd.contexts,
        )
        self.modes.append("oracle")
        return RoundOutcome(actions, rewards, "oracle", actions)


def make_agent(config: PolicyConfig, d: int, rng: np.random.Generator,
               beta: Optional[BetaVector] = None):
    if config.algorithm == "Oracle":
        if beta is None:
            raise ValueError("the oracle policy needs the true coefficients")
        return OracleAgent(beta, d)
    return InterferenceBandit(config, d, rng)
