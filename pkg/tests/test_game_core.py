"""Operator algebra, value computations, serialization, validation."""

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from gameirl.game_core import (BiPolicy, RewardVector, StochasticGame,
                               StructureError, ValidationError,
                               build_operators, expected_reward, flat_index,
                               game_from_json, game_to_json, policy_from_json,
                               policy_to_json, q_vector, reward_from_json,
                               reward_to_json, total_game_value, value_function)


def random_game(rng, n, m, gamma=0.9):
    p = rng.random((n * m * m, n))
    p /= p.sum(axis=1, keepdims=True)
    return StochasticGame(n, m, sp.csr_matrix(p), gamma)


def random_policy(rng, n, m, kind="independent"):
    if kind == "independent":
        p1 = rng.random((n, m))
        p1 /= p1.sum(1, keepdims=True)
        p2 = rng.random((n, m))
        p2 /= p2.sum(1, keepdims=True)
        return BiPolicy.independent(p1, p2)
    j = rng.random((n, m * m))
    j /= j.sum(1, keepdims=True)
    return BiPolicy.from_joint(j)


def random_reward(rng, game):
    return RewardVector(rng.normal(size=game.flat_dim), game.n_states,
                        game.n_actions)


def test_b_one_hot_deterministic():
    rng = np.random.default_rng(0)
    game = random_game(rng, 1, 2)
    pol = BiPolicy.deterministic([0], [0], 2)
    ops = build_operators(game, pol)
    assert np.array_equal(ops.b, [[1.0, 0.0, 0.0, 0.0]])


def test_b_uniform_product():
    rng = np.random.default_rng(0)
    game = random_game(rng, 1, 2)
    ops = build_operators(game, BiPolicy.uniform(1, 2))
    assert np.array_equal(ops.b, [[0.25, 0.25, 0.25, 0.25]])


def test_bp_equals_g_double_sum_oracle():
    rng = np.random.default_rng(1)
    game = random_game(rng, 3, 2)
    pol = random_policy(rng, 3, 2)
    ops = build_operators(game, pol)
    p = game.transitions_dense
    oracle = np.zeros((3, 3))
    for s in range(3):
        for a1 in range(2):
            for a2 in range(2):
                oracle[s] += pol.pi1[s, a1] * pol.pi2[s, a2] * p[flat_index(s, a1, a2, 3, 2)]
    assert np.abs(ops.g - oracle).max() <= 1e-12


def test_expected_reward_cases():
    rng = np.random.default_rng(2)
    game = random_game(rng, 4, 3)
    pol = random_policy(rng, 4, 3)
    ops = build_operators(game, pol)
    zero = RewardVector.zeros(game)
    assert np.array_equal(expected_reward(ops, zero), np.zeros(4))
    det = BiPolicy.deterministic([1] * 4, [2] * 4, 3)
    ops_det = build_operators(game, det)
    r = random_reward(rng, game)
    got = expected_reward(ops_det, r)
    want = np.array([r.values[flat_index(s, 1, 2, 4, 3)] for s in range(4)])
    assert np.abs(got - want).max() == 0.0
    # brute-force double sum over all pairs
    brute = np.zeros(4)
    for s in range(4):
        for a1 in range(3):
            for a2 in range(3):
                brute[s] += pol.joint[s, a1 * 3 + a2] * r.values[flat_index(s, a1, a2, 4, 3)]
    assert np.abs(expected_reward(ops, r) - brute).max() <= 1e-12


def test_value_function_cases():
    rng = np.random.default_rng(3)
    game = random_game(rng, 4, 2)
    pol = random_policy(rng, 4, 2)
    r = random_reward(rng, game)
    assert np.array_equal(value_function(game, pol, RewardVector.zeros(game)),
                          np.zeros(4))
    g0 = StochasticGame(4, 2, game.transitions, 0.0)
    ops0 = build_operators(g0, pol)
    assert np.allclose(value_function(g0, pol, r, ops0),
                       expected_reward(ops0, r), atol=1e-14)
    # fixed-point Bellman iteration oracle, 500 sweeps
    ops = build_operators(game, pol)
    rbar = expected_reward(ops, r)
    v = np.zeros(4)
    for _ in range(500):
        v = rbar + game.discount * (ops.g @ v)
    assert np.abs(value_function(game, pol, r, ops) - v).max() <= 1e-10


def test_q_vector_cases():
    rng = np.random.default_rng(4)
    game = random_game(rng, 5, 2)
    pol = random_policy(rng, 5, 2, kind="joint")
    r = random_reward(rng, game)
    g0 = StochasticGame(5, 2, game.transitions, 0.0)
    assert np.array_equal(q_vector(g0, pol, r), r.values)
    ops = build_operators(game, pol)
    q = q_vector(game, pol, r, ops)
    v = value_function(game, pol, r, ops)
    assert np.abs(ops.b_sparse @ q - v).max() <= 1e-10
    # entrywise oracle: q(s, a) = r(s, a) + gamma P_{s,a} V
    p = game.transitions_dense
    for s in range(5):
        for a1 in range(2):
            for a2 in range(2):
                k = flat_index(s, a1, a2, 5, 2)
                assert q[k] == pytest.approx(r.values[k] + game.discount * p[k] @ v,
                                             abs=1e-10)


def test_total_game_value_cases():
    rng = np.random.default_rng(5)
    game = random_game(rng, 4, 2)
    pol = random_policy(rng, 4, 2)
    r1 = random_reward(rng, game)
    ops = build_operators(game, pol)
    neg = RewardVector(-r1.values, 4, 2)
    assert np.abs(total_game_value(game, pol, r1, neg, ops)).max() <= 1e-12
    assert np.allclose(total_game_value(game, pol, r1, r1, ops),
                       2 * value_function(game, pol, r1, ops), atol=1e-12)
    r2 = random_reward(rng, game)
    assert np.abs(total_game_value(game, pol, r1, r2, ops)
                  - value_function(game, pol, r1, ops)
                  - value_function(game, pol, r2, ops)).max() <= 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_bd_identity_property(seed):
    """B D = (I - gamma G)^-1 B: the algebraic spine of the theorems."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    m = int(rng.integers(2, 4))
    game = random_game(rng, n, m, gamma=float(rng.uniform(0.0, 0.97)))
    pol = random_policy(rng, n, m, kind="joint" if rng.random() < 0.5 else "independent")
    ops = build_operators(game, pol)
    lhs = ops.b @ ops.d
    rhs = ops.solve_ig(ops.b)
    assert np.abs(lhs - rhs).max() <= 1e-9


def test_joint_vs_marginal_b_identical():
    rng = np.random.default_rng(7)
    game = random_game(rng, 4, 3)
    pol = random_policy(rng, 4, 3)
    joint_pol = BiPolicy.from_joint(pol.joint.copy())
    b1 = build_operators(game, pol).b
    b2 = build_operators(game, joint_pol).b
    assert np.abs(b1 - b2).max() <= 1e-15


def test_d_identity_at_zero_discount():
    rng = np.random.default_rng(8)
    game = random_game(rng, 3, 2, gamma=0.0)
    ops = build_operators(game, random_policy(rng, 3, 2))
    assert np.array_equal(ops.d, np.eye(game.flat_dim))


def test_h_selector_consistency():
    rng = np.random.default_rng(9)
    game = random_game(rng, 3, 3)
    pol = random_policy(rng, 3, 3)
    ops = build_operators(game, pol)
    r = random_reward(rng, game)
    # slices match the payoff matrix rows/columns
    for s in range(3):
        for a in range(3):
            assert np.array_equal(r.values[ops.h_cols(s, a, 1)], r.state_matrix(s)[a, :])
            assert np.array_equal(r.values[ops.h_cols(s, a, 2)], r.state_matrix(s)[:, a])
    # stacking player-1 selectors over (s, a) is a permutation of r
    cols = np.concatenate([ops.h_cols(s, a, 1) for s in range(3) for a in range(3)])
    assert np.array_equal(np.sort(cols), np.arange(game.flat_dim))


def test_serialization_roundtrips():
    rng = np.random.default_rng(10)
    game = random_game(rng, 4, 2)
    pol = random_policy(rng, 4, 2)
    joint = random_policy(rng, 4, 2, kind="joint")
    r = random_reward(rng, game)
    g2 = game_from_json(game_to_json(game))
    assert (g2.transitions != game.transitions).nnz == 0
    assert g2.discount == game.discount
    p2 = policy_from_json(policy_to_json(pol))
    assert np.array_equal(p2.pi1, pol.pi1) and np.array_equal(p2.joint, pol.joint)
    j2 = policy_from_json(policy_to_json(joint))
    assert np.array_equal(j2.joint, joint.joint)
    r2 = reward_from_json(reward_to_json(r))
    assert np.array_equal(r2.values, r.values)
    assert r2.layout == "pair_major_v1"


def test_validation_errors():
    rng = np.random.default_rng(11)
    p = rng.random((4, 2))  # rows do not sum to 1
    with pytest.raises(ValidationError):
        StochasticGame(2, 1, sp.csr_matrix(p[:2, :2]), 0.9)
    good = random_game(rng, 2, 2)
    with pytest.raises(ValidationError):
        StochasticGame(2, 2, good.transitions, 1.0)  # discount must be < 1
    with pytest.raises(StructureError):
        RewardVector(np.zeros(5), 2, 2)
    bad = np.array([[0.6, 0.3], [0.5, 0.5]])  # first row sums to 0.9
    with pytest.raises(ValidationError):
        BiPolicy.independent(bad, np.array([[0.5, 0.5], [0.5, 0.5]]))
    pol = random_policy(rng, 3, 2)
    with pytest.raises(StructureError):
        build_operators(good, pol)  # 3-state policy on a 2-state game
