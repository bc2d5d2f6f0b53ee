"""Core types and the interference-aware reward algebra.

A round holds ``N`` units with contexts ``X`` (``N x d``), an interference
matrix ``W`` (``N x N``, unit diagonal) and, once chosen, binary actions.
Unit ``i``'s expected reward is ``sum_j W[i, j] * x_j' beta_{a_j}``, which is
linear in the stacked coefficient ``beta = (beta0, beta1)`` once the
contexts are routed through :func:`transform_covariates`.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class DimensionError(ValueError):
    """Array shapes do not line up."""


class InvariantError(ValueError):
    """A domain invariant (unit diagonal, entry range, binary actions) is violated."""


class MissingActionsError(RuntimeError):
    """An operation needs actions that have not been chosen yet."""


def _as_matrix(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def validate_interference(w, strict: bool = True, atol: float = 0.0) -> np.ndarray:
    """Check (or repair) an interference matrix.

    In strict mode a non-unit diagonal or an off-diagonal entry outside
    ``[-1, 1]`` raises :class:`InvariantError`. In lenient mode the diagonal
    is reset to 1, entries are clamped, and a warning is emitted.
    """
    w = _as_matrix(w, "interference")
    n, m = w.shape
    if n != m:
        raise DimensionError(f"interference matrix must be square, got {w.shape}")
    diag_bad = np.abs(np.diag(w) - 1.0) > atol
    range_bad = (w < -1.0) | (w > 1.0)
    np.fill_diagonal(range_bad, False)
    if not diag_bad.any() and not range_bad.any():
        return w
    if strict:
        if diag_bad.any():
            raise InvariantError("interference matrix diagonal must equal 1")
        raise InvariantError("off-diagonal interference entries must lie in [-1, 1]")
    warnings.warn(
        f"repairing interference matrix: {int(diag_bad.sum())} diagonal and "
        f"{int(range_bad.sum())} out-of-range entries",
        RuntimeWarning,
        stacklevel=2,
    )
    w = np.clip(w, -1.0, 1.0)
    np.fill_diagonal(w, 1.0)
    return w


@dataclass(frozen=True)
class Round:
    """One interaction epoch.

    ``t`` is 1-based. ``actions`` and ``rewards`` stay ``None`` until chosen
    and realized; use :meth:`with_actions` / :meth:`with_rewards` to get the
    filled-in copy.
    """

    t: int
    contexts: np.ndarray
    interference: np.ndarray
    actions: Optional[np.ndarray] = None
    rewards: Optional[np.ndarray] = None
    strict: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        x = _as_matrix(self.contexts, "contexts")
        w = validate_interference(self.interference, strict=self.strict)
        if w.shape[0] != x.shape[0]:
            raise DimensionError(
                f"interference is {w.shape} but contexts have {x.shape[0]} rows"
            )
        object.__setattr__(self, "contexts", x)
        object.__setattr__(self, "interference", w)
        if self.actions is not None:
            object.__setattr__(self, "actions", _check_actions(self.actions, x.shape[0]))
        if self.rewards is not None:
            r = np.asarray(self.rewards, dtype=float)
            if r.shape != (x.shape[0],):
                raise DimensionError(f"rewards must have shape ({x.shape[0]},)")
            object.__setattr__(self, "rewards", r)

    @property
    def n_units(self) -> int:
        return self.contexts.shape[0]

    @property
    def d(self) -> int:
        return self.contexts.shape[1]

    def with_actions(self, actions) -> "Round":
        return Round(self.t, self.contexts, self.interference, actions, None, self.strict)

    def with_rewards(self, rewards) -> "Round":
        if self.actions is None:
            raise MissingActionsError("rewards require actions")
        return Round(
            self.t, self.contexts, self.interference, self.actions, rewards, self.strict
        )


def _check_actions(actions, n: int) -> np.ndarray:
    a = np.asarray(actions)
    if a.shape != (n,):
        raise DimensionError(f"actions must have shape ({n},), got {a.shape}")
    if not np.isin(a, (0, 1)).all():
        raise InvariantError("actions must be 0 or 1")
    return a.astype(np.int8)


@dataclass(frozen=True)
class BetaVector:
    beta0: np.ndarray
    beta1: np.ndarray

    def __post_init__(self):
        b0 = np.asarray(self.beta0, dtype=float).reshape(-1)
        b1 = np.asarray(self.beta1, dtype=float).reshape(-1)
        if b0.shape != b1.shape:
            raise DimensionError("beta0 and beta1 must have the same length")
        object.__setattr__(self, "beta0", b0)
        object.__setattr__(self, "beta1", b1)

    @classmethod
    def from_stacked(cls, beta) -> "BetaVector":
        beta = np.asarray(beta, dtype=float).reshape(-1)
        if beta.size % 2:
            raise DimensionError("stacked beta must have even length")
        d = beta.size // 2
        return cls(beta[:d], beta[d:])

    @property
    def d(self) -> int:
        return self.beta0.size

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([self.beta0, self.beta1])

    def arm(self, a: int) -> np.ndarray:
        return self.beta1 if a else self.beta0

    @property
    def gap(self) -> np.ndarray:
        """``beta1 - beta0``, the per-feature arm-1 advantage."""
        return self.beta1 - self.beta0


@dataclass(frozen=True)
class BoundConstants:
    """Constants of the boundedness, margin and noise assumptions (diagnostics only)."""

    l_x: float
    l_w: float
    lambda_min: float
    u_bound: float
    gamma: float
    sigma: float

    def __post_init__(self):
        for name in ("l_x", "l_w", "lambda_min", "u_bound", "gamma", "sigma"):
            if not getattr(self, name) > 0:
                raise InvariantError(f"{name} must be strictly positive")


def interference_weights(w) -> np.ndarray:
    """Column sums ``omega_i = sum_j W[j, i]`` of a unit-diagonal matrix."""
    w = validate_interference(w, strict=True)
    return w.sum(axis=0)


def transform_covariates(
    contexts: np.ndarray, interference: np.ndarray, actions: np.ndarray
) -> np.ndarray:
    """Per-unit ``2d`` rows ``(sum_j W_ij (1-A_j) X_j, sum_j W_ij A_j X_j)``.

    No validation: this is on the hot path of every simulated round. Use
    :func:`transform_round` for checked input.
    """
    a = np.asarray(actions, dtype=float)[:, None]
    x1 = contexts * a
    return np.hstack([interference @ (contexts - x1), interference @ x1])


def transform_round(rnd: Round) -> np.ndarray:
    if rnd.actions is None:
        raise MissingActionsError(f"round {rnd.t} has no actions")
    return transform_covariates(rnd.contexts, rnd.interference, rnd.actions)


def expected_reward(xt_row, beta: BetaVector) -> float:
    xt_row = np.asarray(xt_row, dtype=float)
    stacked = beta.stacked
    if xt_row.shape[-1] != stacked.size:
        raise DimensionError(
            f"transformed row has length {xt_row.shape[-1]}, beta has {stacked.size}"
        )
    return xt_row @ stacked


def advantage(omega, x, beta: BetaVector):
    """``zeta = omega * x'(beta1 - beta0)``; works row-wise on arrays."""
    return np.asarray(omega) * (np.asarray(x, dtype=float) @ beta.gap)


def oracle_action(omega, x, beta: BetaVector):
    """Arm maximizing total expected reward: 1 iff ``omega * x'(beta1-beta0) > 0``.

    Ties (including ``omega == 0``) go to arm 0. Accepts scalars or arrays of
    units (``omega`` shape ``(n,)``, ``x`` shape ``(n, d)``).
    """
    zeta = advantage(omega, x, beta)
    if np.ndim(zeta) == 0:
        return int(zeta > 0)
    return (zeta > 0).astype(np.int8)


def unit_values(omega, x, beta: BetaVector, actions) -> np.ndarray:
    """``omega_i x_i' beta_{a_i}``: unit ``i``'s contribution to the round total."""
    x = np.asarray(x, dtype=float)
    a = np.asarray(actions)
    return np.asarray(omega) * np.where(a == 1, x @ beta.beta1, x @ beta.beta0)


def unit_regret(omega, x, beta: BetaVector, actions) -> np.ndarray:
    """Per-unit expected regret ``omega x'(beta_{pi*} - beta_a)`` (always >= 0)."""
    best = oracle_action(omega, x, beta)
    return unit_values(omega, x, beta, best) - unit_values(omega, x, beta, actions)
