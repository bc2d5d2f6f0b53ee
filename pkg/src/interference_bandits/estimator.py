"""Online least squares over transformed covariates.

The state keeps sufficient statistics only (Gram matrix, moment vector,
sum of squared rewards, raw-context Gram), so the estimate after any prefix
of rounds equals batch OLS on the concatenated log.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from .domain import BetaVector, BoundConstants, DimensionError

SINGULAR_RTOL = 1e-10


class EstimationNotReady(RuntimeError):
    """The Gram matrix is (numerically) singular; no estimate yet."""


class InsufficientData(RuntimeError):
    pass


class AsymmetricMatrixError(ValueError):
    pass


@dataclass(frozen=True)
class ClippingSchedule:
    """``p = min(1, c_clip * n_bar ** -exponent)``.

    ``exponent`` must stay below 1/2 so that ``n_bar * p**2`` diverges.
    """

    c_clip: float = 0.1
    exponent: float = 0.49

    def __post_init__(self):
        if not self.c_clip > 0:
            raise ValueError("c_clip must be positive")
        if not 0 <= self.exponent < 0.5:
            raise ValueError("exponent must lie in [0, 1/2)")

    def rate(self, n_bar: float) -> float:
        if n_bar <= 0:
            return 1.0
        return min(1.0, self.c_clip * n_bar ** (-self.exponent))


@dataclass
class EstimatorState:
    d: int
    gram: np.ndarray = None
    moment: np.ndarray = None
    raw_gram: np.ndarray = None
    n_bar: int = 0
    sum_sq_rewards: float = 0.0
    last_beta: Optional[BetaVector] = field(default=None, compare=False)

    def __post_init__(self):
        k = 2 * self.d
        if self.gram is None:
            self.gram = np.zeros((k, k))
        if self.moment is None:
            self.moment = np.zeros(k)
        if self.raw_gram is None:
            self.raw_gram = np.zeros((self.d, self.d))

    def copy(self) -> "EstimatorState":
        return EstimatorState(
            self.d,
            self.gram.copy(),
            self.moment.copy(),
            self.raw_gram.copy(),
            self.n_bar,
            self.sum_sq_rewards,
            self.last_beta,
        )

    def absorb(self, xt: np.ndarray, rewards: np.ndarray, raw_contexts: np.ndarray):
        return absorb_round(self, xt, rewards, raw_contexts)

    def to_text(self) -> str:
        """Plain-text dump of the sufficient statistics (debug checkpoint, not a stable format)."""
        buf = io.StringIO()
        buf.write(f"d {self.d}\nn_bar {self.n_bar}\nsum_sq_rewards {self.sum_sq_rewards!r}\n")
        for name in ("gram", "moment", "raw_gram"):
            arr = np.atleast_2d(getattr(self, name))
            buf.write(f"{name} {arr.shape[0]} {arr.shape[1]}\n")
            np.savetxt(buf, arr, fmt="%.17g")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "EstimatorState":
        lines = text.splitlines()
        d = int(lines[0].split()[1])
        n_bar = int(lines[1].split()[1])
        ssr = float(lines[2].split()[1])
        arrays = {}
        i = 3
        while i < len(lines):
            name, rows, cols = lines[i].split()
            rows, cols = int(rows), int(cols)
            block = np.loadtxt(lines[i + 1 : i + 1 + rows], ndmin=2).reshape(rows, cols)
            arrays[name] = block
            i += 1 + rows
        return cls(
            d, arrays["gram"], arrays["moment"].reshape(-1), arrays["raw_gram"], n_bar, ssr
        )


def absorb_round(
    state: EstimatorState, xt: np.ndarray, rewards: np.ndarray, raw_contexts: np.ndarray
) -> EstimatorState:
    """Add one round's ``(X~, R)`` pairs and raw contexts to the state (in place)."""
    xt = np.atleast_2d(np.asarray(xt, dtype=float))
    rewards = np.asarray(rewards, dtype=float).reshape(-1)
    raw_contexts = np.atleast_2d(np.asarray(raw_contexts, dtype=float))
    n = xt.shape[0]
    if rewards.shape[0] != n or raw_contexts.shape[0] != n:
        raise DimensionError("xt, rewards and raw_contexts need the same row count")
    if xt.shape[1] != 2 * state.d or raw_contexts.shape[1] != state.d:
        raise DimensionError("column counts do not match the state dimension")
    g = state.gram + xt.T @ xt
    state.gram = 0.5 * (g + g.T)
    state.moment = state.moment + xt.T @ rewards
    r = state.raw_gram + raw_contexts.T @ raw_contexts
    state.raw_gram = 0.5 * (r + r.T)
    state.n_bar += n
    state.sum_sq_rewards += float(rewards @ rewards)
    state.last_beta = None
    return state


def min_eigenvalue(m, tol: float = 1e-8) -> float:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"expected a square matrix, got {m.shape}")
    scale = max(1.0, float(np.abs(m).max(initial=0.0)))
    if np.abs(m - m.T).max(initial=0.0) > tol * scale:
        raise AsymmetricMatrixError("matrix is not symmetric within tolerance")
    return float(linalg.eigvalsh(m, subset_by_index=[0, 0])[0])


def is_ready(state: EstimatorState) -> bool:
    tr = float(np.trace(state.gram))
    if state.n_bar == 0 or tr <= 0:
        return False
    return min_eigenvalue(state.gram) >= SINGULAR_RTOL * tr


def solve_beta(state: EstimatorState) -> BetaVector:
    """OLS estimate ``A^{-1} b`` via a Cholesky solve; cached until the next absorb."""
    if state.last_beta is not None:
        return state.last_beta
    if not is_ready(state):
        raise EstimationNotReady("Gram matrix is singular; keep exploring uniformly")
    factor = linalg.cho_factor(state.gram, lower=True)
    beta = BetaVector.from_stacked(linalg.cho_solve(factor, state.moment))
    state.last_beta = beta
    return beta


def gram_inverse(state: EstimatorState) -> np.ndarray:
    if not is_ready(state):
        raise EstimationNotReady("Gram matrix is singular")
    factor = linalg.cho_factor(state.gram, lower=True)
    inv = linalg.cho_solve(factor, np.eye(state.gram.shape[0]))
    return 0.5 * (inv + inv.T)


def arm_blocks(matrix: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    """The arm-0 and arm-1 ``d x d`` diagonal blocks of a ``2d x 2d`` matrix."""
    return matrix[:d, :d], matrix[d:, d:]


def clipping_triggered(state: EstimatorState, schedule: ClippingSchedule) -> bool:
    """Whether the next round must fall back to uniform exploration.

    True iff ``lambda_min(A / n) < p * lambda_min(sum x x' / n)``; an empty
    state always triggers.
    """
    n = state.n_bar
    if n == 0:
        return True
    lhs = min_eigenvalue(state.gram / n)
    rhs = schedule.rate(n) * min_eigenvalue(state.raw_gram / n)
    return lhs < rhs


def residual_sum_of_squares(state: EstimatorState, beta: Optional[BetaVector] = None) -> float:
    beta = solve_beta(state) if beta is None else beta
    b = beta.stacked
    rss = state.sum_sq_rewards - 2.0 * b @ state.moment + b @ state.gram @ b
    # an exact fit leaves only cancellation error of order eps * sum(r^2), either sign
    if rss <= 32 * np.finfo(float).eps * state.sum_sq_rewards:
        return 0.0
    return float(rss)


def sigma_hat(state: EstimatorState) -> float:
    """Residual standard deviation ``sqrt(RSS / (n - 2d))``."""
    dof = state.n_bar - 2 * state.d
    if dof <= 0:
        raise InsufficientData(f"need more than {2 * state.d} observations, have {state.n_bar}")
    return math.sqrt(residual_sum_of_squares(state) / dof)


def tail_bound_value(h: float, n_bar: float, p: float, consts: BoundConstants, d: int) -> float:
    if not h > 0:
        raise ValueError("h must be positive")
    expo = h**2 * n_bar * p**2 / (16 * d**3 * consts.sigma**2 * consts.l_w**2 * consts.l_x**2)
    return min(1.0, 4 * d * math.exp(-expo))


def tail_bound(
    h: float,
    state: EstimatorState,
    schedule: ClippingSchedule,
    consts: BoundConstants,
    d: int,
) -> float:
    """Upper bound on ``P(||beta_hat - beta||_1 > h)`` at the state's sample size."""
    n = state.n_bar
    return tail_bound_value(h, n, schedule.rate(n), consts, d)


def batch_ols(xt: np.ndarray, rewards: np.ndarray) -> np.ndarray:
    """Plain least squares on a stacked design, for cross-checks and offline fits."""
    coef, *_ = np.linalg.lstsq(np.asarray(xt, float), np.asarray(rewards, float), rcond=None)
    return coef
