import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from interference_bandits.domain import BetaVector, oracle_action, transform_covariates
from interference_bandits.environment import (
    a1_value,
    gen_round,
    monte_carlo_v_star,
)
from interference_bandits.experiments import simulate
from interference_bandits.policies import PolicyConfig
from interference_bandits.value_estimation import (
    EvaluationLog,
    IncompleteLogError,
    dm_estimate,
    dr_estimate,
    ipw_estimate,
    normal_quantile,
    sigma_v_estimate,
    value_report,
)

# two-sided 95% normal critical value, mpmath at 30 digits
Z_975 = 1.95996398454005423552


def make_log(n=1, action=1, pi_hat=1, kappa=0.0, reward=0.0, mu=0.0, omega=1.0, x=None,
             t=None, **kw):
    x = np.ones((n, 1)) if x is None else x
    return EvaluationLog.from_arrays(
        np.broadcast_to(omega, (n,)), x, np.broadcast_to(action, (n,)),
        np.broadcast_to(reward, (n,)), np.broadcast_to(pi_hat, (n,)),
        np.broadcast_to(kappa, (n,)), np.broadcast_to(mu, (n,)), t=t, **kw,
    )


def random_log(rng, n, mu=True):
    return EvaluationLog.from_arrays(
        rng.uniform(0.5, 2, n), rng.normal(size=(n, 2)), rng.integers(0, 2, n),
        rng.normal(size=n), rng.integers(0, 2, n), rng.uniform(0, 0.9, n),
        rng.normal(size=n) if mu else np.zeros(n), t=np.sort(rng.integers(1, 6, n)),
    )


# ---------------------------------------------------------------------------
# IPW


def test_ipw_single_agreeing_entry():
    assert ipw_estimate(make_log(kappa=0.5, reward=2.0)) == pytest.approx(4.0, abs=1e-15)


def test_ipw_all_disagree_is_zero():
    log = make_log(n=5, action=0, pi_hat=1, kappa=0.3, reward=7.0)
    assert ipw_estimate(log) == 0.0


def test_ipw_zero_kappa_all_agree_is_reward_mean(rng):
    r = rng.normal(size=20)
    log = EvaluationLog.from_arrays(np.ones(20), np.ones((20, 1)), np.ones(20, int), r,
                                    np.ones(20, int), np.zeros(20), np.zeros(20))
    assert ipw_estimate(log) == pytest.approx(r.mean(), abs=1e-14)


def test_kappa_above_ceiling_is_clamped_with_warning():
    log = make_log(kappa=0.995, reward=1.0)
    with pytest.warns(RuntimeWarning):
        v = ipw_estimate(log)
    assert v == pytest.approx(100.0)
    assert log.clamped == 1


def test_empty_log_rejected():
    log = EvaluationLog(2)
    for f in (ipw_estimate, dm_estimate, dr_estimate):
        with pytest.raises(IncompleteLogError):
            f(log)


# ---------------------------------------------------------------------------
# DM / DR


def test_dm_single_entry():
    assert dm_estimate(make_log(mu=1.7)) == 1.7


def test_dm_requires_mu_hat():
    log = EvaluationLog.from_arrays([1.0], [[1.0]], [1], [1.0], [1], [0.0])
    with pytest.raises(IncompleteLogError):
        dm_estimate(log)


def test_dr_single_entry():
    assert dr_estimate(make_log(kappa=0.0, reward=2.0, mu=1.0)) == pytest.approx(2.0)


@given(st.integers(0, 2**32 - 1), st.integers(1, 60))
def test_dr_equals_dm_when_residuals_vanish(seed, n):
    rng = np.random.default_rng(seed)
    log = random_log(rng, n)
    exact = EvaluationLog.from_arrays(
        log.column("omega"), log.column("x"), log.column("action"), log.column("mu_hat"),
        log.column("pi_hat"), log.column("kappa_snapshot"), log.column("mu_hat"),
        t=log.column("t"),
    )
    assert abs(dr_estimate(exact) - dm_estimate(exact)) <= 1e-12


@given(st.integers(0, 2**32 - 1), st.integers(1, 60))
def test_dr_equals_ipw_when_mu_is_zero(seed, n):
    log = random_log(np.random.default_rng(seed), n, mu=False)
    assert abs(dr_estimate(log) - ipw_estimate(log)) <= 1e-12


@given(st.integers(0, 2**32 - 1), st.integers(2, 40))
def test_estimators_invariant_to_permutation_within_rounds(seed, n):
    rng = np.random.default_rng(seed)
    log = random_log(rng, n)
    t = log.column("t")
    perm = np.concatenate([rng.permutation(np.flatnonzero(t == s)) for s in np.unique(t)])
    cols = [log.column(c)[perm] for c in ("omega", "x", "action", "reward", "pi_hat",
                                          "kappa_snapshot", "mu_hat")]
    shuffled = EvaluationLog.from_arrays(*cols, t=t[perm])
    for f in (ipw_estimate, dm_estimate, dr_estimate):
        assert f(shuffled) == pytest.approx(f(log), abs=1e-12)


def _propensity_log(rng, n, kappa):
    """Log whose actions follow pi_hat with probability ``1 - kappa``.

    Agreeing units earn ``mu + noise``; disagreeing units earn far less, so
    IPW-style terms are only unbiased with the right propensity.
    """
    mu = rng.uniform(1, 3, n)
    agree = rng.random(n) >= kappa
    pi = rng.integers(0, 2, n)
    action = np.where(agree, pi, 1 - pi)
    reward = np.where(agree, mu, mu - 5.0) + rng.normal(0, 0.5, n)
    return mu, pi, action, reward


def test_double_robustness_on_known_propensity(rng):
    n, kappa = 100_000, 0.3
    mu, pi, action, reward = _propensity_log(rng, n, kappa)
    target = mu.mean()

    def dr(k, m):
        log = EvaluationLog.from_arrays(np.ones(n), np.ones((n, 1)), action, reward, pi,
                                        np.full(n, k), m)
        agree = action == pi
        terms = agree / (1 - k) * (reward - m) + m
        return dr_estimate(log), terms.std() / math.sqrt(n)

    mu_bad = mu + 1.0
    v, se = dr(kappa, mu)
    assert abs(v - target) < 3 * se
    v, se = dr(0.6, mu)
    assert abs(v - target) < 3 * se
    v, se = dr(kappa, mu_bad)
    assert abs(v - target) < 3 * se
    v, se = dr(0.6, mu_bad)
    assert abs(v - target) > 10 * se


# ---------------------------------------------------------------------------
# sigma_V and the report


def test_sigma_v_constant_value_term():
    beta = BetaVector([2.0], [1.0])
    log = make_log(n=4, kappa=0.0, final_beta=beta, final_kappa=0.0)
    assert sigma_v_estimate(log, 1.0) == pytest.approx(1.0)


def test_sigma_v_two_point_population_variance():
    beta = BetaVector([0.0], [1.0])
    # values omega * x' beta_pi = {0, 2}: x = 0 -> arm 0 value 0; x = 2 -> arm 1 value 2
    log = make_log(n=2, x=np.array([[0.0], [2.0]]), final_beta=beta, final_kappa=0.0)
    assert sigma_v_estimate(log, 0.0) == pytest.approx(1.0, abs=1e-15)


def test_sigma_v_doubling_sigma_adds_three_sigma_squared(rng):
    log = random_log(rng, 30)
    log.final_beta = BetaVector(rng.normal(size=2), rng.normal(size=2))
    log.final_kappa = 0.0
    for s in (0.5, 1.0, 2.0):
        gap = sigma_v_estimate(log, 2 * s) ** 2 - sigma_v_estimate(log, s) ** 2
        assert gap == pytest.approx(3 * s**2, rel=1e-12)


def test_sigma_v_needs_two_entries():
    with pytest.raises(IncompleteLogError):
        sigma_v_estimate(make_log(final_beta=BetaVector([1.0], [1.0])), 1.0)


def test_normal_quantile_matches_reference():
    assert normal_quantile(0.05) == pytest.approx(Z_975, abs=1e-12)
    assert round(normal_quantile(0.05), 6) == 1.959964


def test_report_degenerate_log_has_zero_width_at_constant():
    beta = BetaVector([3.0], [1.0])
    log = make_log(n=10, action=0, pi_hat=0, reward=3.0, mu=3.0, final_beta=beta, final_kappa=0.0)
    rep = value_report(log, 0.0)
    assert rep.ci_lower == rep.ci_upper == rep.v_dr == 3.0


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 0.5))
def test_report_interval_is_centred_with_stated_width(seed, alpha):
    rng = np.random.default_rng(seed)
    log = random_log(rng, 25)
    log.final_beta = BetaVector(rng.normal(size=2), rng.normal(size=2))
    log.final_kappa = 0.2
    rep = value_report(log, 1.0, alpha)
    assert rep.ci_lower <= rep.v_dr <= rep.ci_upper
    width = 2 * normal_quantile(alpha) * rep.sigma_v_hat / math.sqrt(rep.n_bar)
    assert rep.ci_upper - rep.ci_lower == pytest.approx(width, rel=1e-12)


# ---------------------------------------------------------------------------
# logs from simulated runs


def test_noiseless_dm_with_true_policy_matches_monte_carlo_value():
    env = a1_value(sigma=0.0)
    rng = np.random.default_rng(3)
    beta = env.draw_beta(rng)
    totals, counts = [], []
    for t in range(20_000):
        rnd = gen_round(env, rng, t + 1)
        omega = rnd.interference.sum(axis=0)
        pi = oracle_action(omega, rnd.contexts, beta)
        mu = transform_covariates(rnd.contexts, rnd.interference, pi) @ beta.stacked
        totals.append(mu.sum())
        counts.append(mu.size)
    totals, counts = np.array(totals), np.array(counts)
    dm = totals.sum() / counts.sum()
    # ratio-estimator stderr over rounds
    resid = totals - dm * counts
    se_log = math.sqrt((resid**2).sum()) / counts.sum()
    v_star, se_mc = monte_carlo_v_star(env, beta, 200_000, np.random.default_rng(4))
    assert abs(dm - v_star) < 3 * math.hypot(se_log, se_mc)


def test_identity_log_dm_matches_classical_recomputation():
    env = a1_value().with_identity()
    pc = PolicyConfig("EG", sigma=0.5)
    betas = {}

    def snap(agent, envr, t):
        betas[t] = agent.current_beta()

    tr = simulate(env, pc, 11, 0, checkpoints=range(1, env.horizon + 1), on_checkpoint=snap)
    log = tr.agent.finalize_log()
    t, x, pi = log.column("t"), log.column("x"), log.column("pi_hat")
    mu = np.array([x_i @ (betas[s - 1].beta1 if p else betas[s - 1].beta0)
                   for s, x_i, p in zip(t, x, pi)])
    assert dm_estimate(log) == pytest.approx(mu.mean(), abs=1e-10)
    classical = (x @ (betas[t[-1] - 1].beta1 - betas[t[-1] - 1].beta0) > 0)
    assert np.array_equal(pi[t == t[-1]], classical[t == t[-1]].astype(np.int8))


def test_csv_round_trip(tmp_path, rng):
    log = random_log(rng, 17)
    path = tmp_path / "log.csv"
    log.to_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "t,i,omega,action,pi_hat,kappa_snapshot,reward,mu_hat"
    back = EvaluationLog.from_csv(path)
    for c in ("t", "i", "omega", "action", "pi_hat", "kappa_snapshot", "reward", "mu_hat"):
        np.testing.assert_array_equal(back.column(c), log.column(c))
    for f in (ipw_estimate, dm_estimate, dr_estimate):
        assert f(back) == f(log)


def test_csv_missing_column_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,i,omega,action\n1,0,1.0,1\n")
    with pytest.raises(IncompleteLogError):
        EvaluationLog.from_csv(path)
