"""Asymptotic inference for the online OLS coefficient.

The limiting covariance of ``sqrt(n) (beta_hat - beta)`` is ``sigma^4 G^{-1}``.
``G`` is estimated by ``sigma^2 * (Gram / n)``; plugging that in collapses to
the familiar ``sigma^2 (X~'X~)^{-1}``. Both forms are exposed so tests can pin
them to each other.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats

from .domain import BetaVector
from .estimator import EstimationNotReady, EstimatorState, gram_inverse


@dataclass(frozen=True)
class InferenceReport:
    g_hat: np.ndarray
    chi2_stat: float
    df: int
    covered: bool
    sigma_used: float


def g_matrix_estimate(state: EstimatorState, sigma: float) -> np.ndarray:
    if state.n_bar == 0:
        raise EstimationNotReady("no observations absorbed")
    g = sigma**2 * state.gram / state.n_bar
    return 0.5 * (g + g.T)


def chi2_quantile(alpha_level: float, df: int) -> float:
    """Upper-``alpha`` point of the chi-square distribution."""
    return float(stats.chi2.isf(alpha_level, df)) if alpha_level < 1 else 0.0


def _as_stacked(b) -> np.ndarray:
    return b.stacked if isinstance(b, BetaVector) else np.asarray(b, dtype=float)


def beta_region_test(beta_hat, beta_true, g_hat, sigma: float, n_bar: int,
                     alpha_level: float = 0.05) -> tuple[float, bool]:
    """Wald statistic ``(n / sigma^4) diff' G diff`` against ``chi2_alpha(2d)``."""
    g_hat = np.asarray(g_hat, dtype=float)
    diff = _as_stacked(beta_hat) - _as_stacked(beta_true)
    if np.linalg.matrix_rank(g_hat) < g_hat.shape[0]:
        raise EstimationNotReady("G estimate is singular")
    stat = float(n_bar / sigma**4 * diff @ g_hat @ diff)
    return stat, stat <= chi2_quantile(alpha_level, diff.size)


def beta_covariance(state: EstimatorState, sigma: float) -> np.ndarray:
    """Estimated ``Var(beta_hat) = sigma^2 (X~'X~)^{-1}``."""
    return sigma**2 * gram_inverse(state)


def beta_covariance_from_g(g_hat: np.ndarray, sigma: float, n_bar: int) -> np.ndarray:
    """The same covariance written as ``sigma^4 G^{-1} / n``."""
    inv = linalg.inv(g_hat)
    return sigma**4 * 0.5 * (inv + inv.T) / n_bar


def inference_report(state: EstimatorState, beta_hat, beta_true, sigma: float,
                     alpha_level: float = 0.05) -> InferenceReport:
    g = g_matrix_estimate(state, sigma)
    stat, covered = beta_region_test(beta_hat, beta_true, g, sigma, state.n_bar, alpha_level)
    return InferenceReport(g, stat, g.shape[0], covered, sigma)
