"""IPW, direct-method and doubly-robust estimates of the optimal value.

All estimators read an :class:`EvaluationLog`, one entry per decided unit,
where the estimated-optimal arm, the exploration-rate snapshot and the
model prediction were recorded at decision time.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .domain import BetaVector, oracle_action

KAPPA_CEILING = 0.99
CSV_FIELDS = ("t", "i", "omega", "action", "pi_hat", "kappa_snapshot", "reward", "mu_hat")


class IncompleteLogError(ValueError):
    pass


@dataclass
class EvaluationLog:
    """Columnar per-unit decision log, ordered by ``(t, i)``."""

    d: int
    _chunks: dict = field(default_factory=dict, repr=False)
    final_beta: Optional[BetaVector] = None
    final_kappa: Optional[float] = None
    clamped: int = 0

    _COLUMNS = ("t", "i", "omega", "x", "action", "reward", "pi_hat", "kappa_snapshot",
                "mu_hat", "xt_row_pihat")

    def __post_init__(self):
        for c in self._COLUMNS:
            self._chunks.setdefault(c, [])
        self._cache = None

    def append_round(self, t, omega, x, actions, rewards, pi_hat, kappa_snapshot, mu_hat,
                     xt_row_pihat=None):
        n = len(omega)
        if xt_row_pihat is None:
            xt_row_pihat = np.full((n, 2 * self.d), np.nan)
        mu = np.full(n, np.nan) if mu_hat is None else np.asarray(mu_hat, float)
        cols = {
            "t": np.full(n, t, dtype=int),
            "i": np.arange(n),
            "omega": np.asarray(omega, float),
            "x": np.asarray(x, float).reshape(n, self.d),
            "action": np.asarray(actions, dtype=np.int8),
            "reward": np.asarray(rewards, float),
            "pi_hat": np.asarray(pi_hat, dtype=np.int8),
            "kappa_snapshot": np.broadcast_to(np.asarray(kappa_snapshot, float), (n,)).copy(),
            "mu_hat": mu,
            "xt_row_pihat": np.asarray(xt_row_pihat, float),
        }
        for k, v in cols.items():
            self._chunks[k].append(v)
        self._cache = None

    def column(self, name: str) -> np.ndarray:
        if self._cache is None:
            self._cache = {}
        if name not in self._cache:
            chunks = self._chunks[name]
            if chunks:
                self._cache[name] = np.concatenate(chunks)
            elif name in ("x",):
                self._cache[name] = np.zeros((0, self.d))
            elif name == "xt_row_pihat":
                self._cache[name] = np.zeros((0, 2 * self.d))
            else:
                self._cache[name] = np.zeros(0)
        return self._cache[name]

    def __len__(self) -> int:
        return int(sum(len(c) for c in self._chunks["t"]))

    @classmethod
    def from_arrays(cls, omega, x, action, reward, pi_hat, kappa_snapshot, mu_hat=None,
                    t=None, final_beta=None, final_kappa=None) -> "EvaluationLog":
        omega = np.asarray(omega, float)
        n = omega.size
        x = np.asarray(x, float).reshape(n, -1)
        log = cls(x.shape[1], final_beta=final_beta, final_kappa=final_kappa)
        if n == 0:
            return log
        t = np.ones(n, dtype=int) if t is None else np.asarray(t, dtype=int)
        # split into rounds so per-round indices are regenerated
        bounds = np.flatnonzero(np.diff(t)) + 1
        for idx in np.split(np.arange(n), bounds):
            log.append_round(
                int(t[idx[0]]), omega[idx], x[idx], np.asarray(action)[idx],
                np.asarray(reward, float)[idx], np.asarray(pi_hat)[idx],
                np.broadcast_to(np.asarray(kappa_snapshot, float), (n,))[idx],
                None if mu_hat is None else np.asarray(mu_hat, float)[idx],
            )
        return log

    def kappa(self) -> np.ndarray:
        """Snapshots clamped at :data:`KAPPA_CEILING` so propensities stay >= 0.01."""
        k = self.column("kappa_snapshot")
        over = k > KAPPA_CEILING
        n_over = int(over.sum())
        if n_over:
            self.clamped += n_over
            warnings.warn(f"{n_over} kappa snapshots clamped to {KAPPA_CEILING}", RuntimeWarning,
                          stacklevel=3)
        return np.minimum(k, KAPPA_CEILING)

    def weights(self) -> np.ndarray:
        agree = self.column("action") == self.column("pi_hat")
        return agree / (1.0 - self.kappa())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_FIELDS)
            cols = [self.column(c) for c in CSV_FIELDS]
            for row in zip(*cols):
                writer.writerow([_fmt(v) for v in row])

    @classmethod
    def from_csv(cls, path, d: int = 0) -> "EvaluationLog":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if rows and set(CSV_FIELDS) - set(rows[0]):
            raise IncompleteLogError(f"missing columns {set(CSV_FIELDS) - set(rows[0])}")

        def col(name, typ=float):
            return np.array([typ(r[name]) for r in rows])

        n = len(rows)
        return cls.from_arrays(
            col("omega"), np.zeros((n, d)), col("action", int), col("reward"),
            col("pi_hat", int), col("kappa_snapshot"), col("mu_hat"), t=col("t", int),
        )


def _fmt(v) -> str:
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    return repr(float(v))


def _check_nonempty(log: EvaluationLog):
    if len(log) == 0:
        raise IncompleteLogError("evaluation log is empty")


def _mu_hat(log: EvaluationLog) -> np.ndarray:
    mu = log.column("mu_hat")
    if np.isnan(mu).any():
        raise IncompleteLogError("mu_hat missing for some entries")
    return mu


def ipw_terms(log: EvaluationLog) -> np.ndarray:
    return log.weights() * log.column("reward")


def dr_terms(log: EvaluationLog) -> np.ndarray:
    mu = _mu_hat(log)
    return log.weights() * (log.column("reward") - mu) + mu


def ipw_estimate(log: EvaluationLog) -> float:
    _check_nonempty(log)
    return float(ipw_terms(log).mean())


def dm_estimate(log: EvaluationLog) -> float:
    _check_nonempty(log)
    return float(_mu_hat(log).mean())


def dr_estimate(log: EvaluationLog) -> float:
    _check_nonempty(log)
    return float(dr_terms(log).mean())


def sigma_v_estimate(log: EvaluationLog, sigma: float, beta: Optional[BetaVector] = None,
                     final_kappa: Optional[float] = None) -> float:
    """Plug-in standard deviation of the DR estimate.

    Noise part ``sigma^2 / (1 - kappa_final)`` plus the population variance of
    each unit's optimal value ``omega x' beta_{pi}`` under the final estimate.
    """
    n = len(log)
    if n < 2:
        raise IncompleteLogError("need at least two entries")
    beta = log.final_beta if beta is None else beta
    kappa = log.final_kappa if final_kappa is None else final_kappa
    if kappa is None:
        kappa = float(np.mean(log.column("action") != log.column("pi_hat")))
    kappa = min(kappa, KAPPA_CEILING)
    omega, x = log.column("omega"), log.column("x")
    if beta is None:
        raise IncompleteLogError("final coefficient estimate is required")
    pi = oracle_action(omega, x, beta)
    value = omega * np.where(pi == 1, x @ beta.beta1, x @ beta.beta0)
    var = sigma**2 / (1.0 - kappa) + float(np.var(value))
    return math.sqrt(var)


@dataclass(frozen=True)
class ValueReport:
    v_ipw: float
    v_dm: float
    v_dr: float
    sigma_v_hat: float
    ci_lower: float
    ci_upper: float
    n_bar: int
    alpha_level: float

    def covers(self, value: float) -> bool:
        return self.ci_lower <= value <= self.ci_upper


def normal_quantile(alpha_level: float) -> float:
    """Two-sided critical value ``z_{alpha/2}``."""
    return float(stats.norm.ppf(1.0 - alpha_level / 2.0))


def value_report(log: EvaluationLog, sigma: float, alpha_level: float = 0.05,
                 beta: Optional[BetaVector] = None) -> ValueReport:
    _check_nonempty(log)
    n = len(log)
    v_dr = dr_estimate(log)
    s = sigma_v_estimate(log, sigma, beta)
    half = normal_quantile(alpha_level) * s / math.sqrt(n)
    return ValueReport(
        ipw_estimate(log), dm_estimate(log), v_dr, s, v_dr - half, v_dr + half, n, alpha_level
    )
