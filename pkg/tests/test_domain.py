import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_round
from interference_bandits.domain import (
    BetaVector,
    BoundConstants,
    DimensionError,
    InvariantError,
    MissingActionsError,
    Round,
    advantage,
    expected_reward,
    interference_weights,
    oracle_action,
    transform_covariates,
    transform_round,
    unit_regret,
    unit_values,
    validate_interference,
)


def brute_force_rewards(x, w, a, beta):
    """Mean rewards from the double sum over units, one term at a time."""
    n = len(a)
    out = np.zeros(n)
    for i in range(n):
        for j in range(n):
            b = beta.beta1 if a[j] == 1 else beta.beta0
            out[i] += w[i, j] * float(np.dot(x[j], b))
    return out


def brute_force_transform(x, w, a):
    n, d = x.shape
    rows = np.zeros((n, 2 * d))
    for i in range(n):
        for j in range(n):
            if a[j] == 0:
                rows[i, :d] += w[i, j] * x[j]
            else:
                rows[i, d:] += w[i, j] * x[j]
    return rows


# -- interference weights --------------------------------------------------

def test_weights_identity():
    assert np.array_equal(interference_weights(np.eye(2)), [1.0, 1.0])


def test_weights_are_column_sums():
    np.testing.assert_allclose(interference_weights([[1, 0.5], [0.2, 1]]), [1.2, 1.5])


def test_weights_can_vanish():
    np.testing.assert_array_equal(interference_weights([[1, -1], [-1, 1]]), [0.0, 0.0])


def test_weights_reject_non_square():
    with pytest.raises(DimensionError):
        interference_weights(np.ones((2, 3)))


def test_weights_reject_bad_diagonal():
    with pytest.raises(InvariantError):
        interference_weights([[2.0, 0], [0, 1]])


@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_weight_bounds(n, seed):
    _, w, _ = random_round(np.random.default_rng(seed), n, 1)
    omega = interference_weights(w)
    assert np.all(omega >= 1 - (n - 1) - 1e-12)
    assert np.all(omega <= n + 1e-12)


def test_lenient_validation_repairs_and_warns():
    with pytest.warns(RuntimeWarning):
        w = validate_interference([[1.5, 2.0], [-3.0, 1.0]], strict=False)
    np.testing.assert_array_equal(w, [[1.0, 1.0], [-1.0, 1.0]])


def test_round_rejects_out_of_range_entry():
    with pytest.raises(InvariantError):
        Round(1, np.ones((2, 1)), [[1, 1.2], [0, 1]])


def test_round_rejects_non_binary_actions():
    with pytest.raises(InvariantError):
        Round(1, np.ones((2, 1)), np.eye(2), actions=[0, 2])


def test_round_with_actions_and_rewards():
    r = Round(1, np.ones((2, 1)), np.eye(2)).with_actions([1, 0]).with_rewards([0.5, 1.5])
    assert r.n_units == 2 and r.d == 1
    assert r.actions.tolist() == [1, 0]
    with pytest.raises(MissingActionsError):
        Round(1, np.ones((2, 1)), np.eye(2)).with_rewards([0.0, 0.0])


# -- transform -------------------------------------------------------------

def test_transform_hand_example():
    x = np.array([[2.0], [3.0]])
    w = np.array([[1, 0.5], [0.2, 1]])
    xt = transform_covariates(x, w, np.array([0, 1]))
    np.testing.assert_allclose(xt, [[2.0, 1.5], [0.4, 3.0]])


def test_transform_identity_all_treated():
    x = np.arange(6.0).reshape(3, 2)
    xt = transform_covariates(x, np.eye(3), np.ones(3, dtype=int))
    assert np.array_equal(xt[:, :2], np.zeros((3, 2)))
    assert np.array_equal(xt[:, 2:], x)


def test_transform_round_needs_actions():
    with pytest.raises(MissingActionsError):
        transform_round(Round(1, np.ones((1, 1)), np.eye(1)))


@given(st.integers(1, 8), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_transform_blocks_sum_to_wx(n, d, seed):
    x, w, a = random_round(np.random.default_rng(seed), n, d)
    xt = transform_covariates(x, w, a)
    np.testing.assert_allclose(xt[:, :d] + xt[:, d:], w @ x, atol=1e-12)


@given(st.integers(1, 8), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_transform_matches_term_by_term_sum(n, d, seed):
    x, w, a = random_round(np.random.default_rng(seed), n, d)
    np.testing.assert_allclose(transform_covariates(x, w, a), brute_force_transform(x, w, a),
                               atol=1e-12)


@given(st.integers(1, 8), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_transform_row_norm_bound(n, d, seed):
    x, w, a = random_round(np.random.default_rng(seed), n, d)
    l_x = np.linalg.norm(x, axis=1).max()
    l_w = np.abs(w).sum(axis=1).max()
    norms = np.linalg.norm(transform_covariates(x, w, a), axis=1)
    assert np.all(norms <= np.sqrt(2) * l_w * l_x + 1e-9)


@given(st.integers(1, 8), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_identity_gives_disjoint_arm_encoding(n, d, seed):
    x, _, a = random_round(np.random.default_rng(seed), n, d)
    xt = transform_covariates(x, np.eye(n), a)
    expect = np.where(a[:, None] == 1, np.hstack([0 * x, x]), np.hstack([x, 0 * x]))
    np.testing.assert_array_equal(xt, expect)


@given(st.integers(1, 8), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_linear_reward_matches_double_sum(n, d, seed):
    rng = np.random.default_rng(seed)
    x, w, a = random_round(rng, n, d)
    beta = BetaVector(rng.normal(size=d), rng.normal(size=d))
    xt = transform_covariates(x, w, a)
    np.testing.assert_allclose(xt @ beta.stacked, brute_force_rewards(x, w, a, beta), atol=1e-10)


@given(st.integers(1, 8), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_aggregation_identity(n, d, seed):
    rng = np.random.default_rng(seed)
    x, w, a = random_round(rng, n, d)
    beta = BetaVector(rng.normal(size=d), rng.normal(size=d))
    total = (transform_covariates(x, w, a) @ beta.stacked).sum()
    omega = w.sum(axis=0)
    assert abs(total - unit_values(omega, x, beta, a).sum()) < 1e-10


# -- expected reward -------------------------------------------------------

def test_expected_reward_hand_example():
    assert expected_reward([2.0, 1.5], BetaVector([1.0], [2.0])) == 5.0


def test_expected_reward_zero_row():
    assert expected_reward(np.zeros(4), BetaVector([1.0, 2.0], [3.0, 4.0])) == 0.0


def test_expected_reward_basis_extraction():
    beta = BetaVector([1.0, 2.0], [3.0, 4.0])
    for k in range(4):
        assert expected_reward(np.eye(4)[k], beta) == beta.stacked[k]


def test_expected_reward_dimension_mismatch():
    with pytest.raises(DimensionError):
        expected_reward([1.0, 2.0, 3.0], BetaVector([1.0], [2.0]))


def test_beta_vector_roundtrip():
    b = BetaVector.from_stacked([1, 2, 3, 4])
    assert b.d == 2 and b.stacked.size == 4
    np.testing.assert_array_equal(b.arm(1), [3, 4])
    with pytest.raises(DimensionError):
        BetaVector.from_stacked([1, 2, 3])


def test_bound_constants_positive():
    with pytest.raises(InvariantError):
        BoundConstants(l_x=1, l_w=1, lambda_min=0, u_bound=1, gamma=1, sigma=1)


# -- oracle action ---------------------------------------------------------

BETA_GAP2 = BetaVector([0.0], [2.0])


def test_oracle_positive_advantage():
    assert oracle_action(1.0, [1.0], BETA_GAP2) == 1


def test_oracle_sign_flip():
    assert oracle_action(-1.0, [1.0], BETA_GAP2) == 0


def test_oracle_tie_goes_to_arm_zero():
    assert oracle_action(0.0, [1.0], BETA_GAP2) == 0
    assert advantage(0.0, [1.0], BETA_GAP2) == 0.0


@given(st.floats(-5, 5), st.floats(0.01, 100), st.integers(0, 2**32 - 1))
def test_oracle_invariant_to_positive_scaling(omega, c, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=3)
    beta = BetaVector(rng.normal(size=3), rng.normal(size=3))
    assert oracle_action(omega, x, beta) == oracle_action(c * omega, x, beta)


def test_oracle_is_globally_optimal_small_instances():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n, d = int(rng.integers(1, 7)), int(rng.integers(1, 4))
        x, w, _ = random_round(rng, n, d)
        beta = BetaVector(rng.normal(size=d), rng.normal(size=d))
        best = max(brute_force_rewards(x, w, np.array(a), beta).sum()
                   for a in itertools.product((0, 1), repeat=n))
        pi = oracle_action(w.sum(axis=0), x, beta)
        assert brute_force_rewards(x, w, pi, beta).sum() >= best - 1e-10


@given(st.integers(1, 8), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_unit_regret_nonnegative_and_zero_at_oracle(n, d, seed):
    rng = np.random.default_rng(seed)
    x, w, a = random_round(rng, n, d)
    beta = BetaVector(rng.normal(size=d), rng.normal(size=d))
    omega = w.sum(axis=0)
    assert np.all(unit_regret(omega, x, beta, a) >= 0)
    assert np.all(unit_regret(omega, x, beta, oracle_action(omega, x, beta)) == 0)
