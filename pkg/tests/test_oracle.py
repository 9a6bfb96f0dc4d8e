import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import state_major
from psm.envs import build_four_room, distances_to, sample_goals
from psm.flow import membership_residual, successor_measure_basis, visitation_basis
from psm.mdp import (RewardFunction, StochasticPolicy, TabularMdp, goal_reward, random_mdp,
                     random_policy, toy_mdp, uniform_policy)
from psm.oracle import (Visitation, enumerate_deterministic_policies, policy_evaluation,
                        policy_from_visitation, q_from_sm, sm_flow_residual, successor_measure,
                        value_iteration, visitation)


def test_zero_discount_measure_is_identity(rng):
    mdp = random_mdp(3, 2, 0.0, rng)
    np.testing.assert_allclose(successor_measure(mdp, random_policy(3, 2, rng)).tensor, np.eye(6), atol=1e-15)


def test_toy_stay_policy_matches_power_series():
    g = 0.5
    mdp = toy_mdp(g)
    pi = StochasticPolicy.deterministic([0, 0], 2)  # always switch: a deterministic 2-cycle
    m = successor_measure(mdp, pi).tensor
    chain = np.zeros((4, 4))
    for s in range(2):
        for a in range(2):
            nxt = 1 - s if a == 0 else s
            chain[s * 2 + a, nxt * 2 + 0] = 1.0
    series = sum((1 - g) * g ** t * np.linalg.matrix_power(chain, t) for t in range(65))
    np.testing.assert_allclose(m, series, atol=1e-15)


@given(st.integers(2, 6), st.integers(1, 3), st.floats(0.0, 0.99), st.integers(0, 2**31))
def test_measure_rows_normalized_and_recursive(n_s, n_a, gamma, seed):
    r = np.random.default_rng(seed)
    mdp = random_mdp(n_s, n_a, gamma, r)
    pi = random_policy(n_s, n_a, r)
    m = successor_measure(mdp, pi)
    assert np.all(m.tensor >= -1e-12)
    np.testing.assert_allclose(m.tensor.sum(axis=1), 1.0, atol=1e-9)
    assert sm_flow_residual(mdp, pi, m).max() < 1e-9


def test_recursion_residual_many_pairs(rng):
    for _ in range(50):
        mdp = random_mdp(int(rng.integers(2, 8)), int(rng.integers(1, 4)), 0.95, rng)
        pi = random_policy(mdp.n_states, mdp.n_actions, rng)
        assert sm_flow_residual(mdp, pi, successor_measure(mdp, pi)).max() < 1e-9


def test_absorbing_stay_visitation_is_one_hot():
    p = np.zeros((2, 2, 2))
    p[:, 0, 1] = 1.0  # action 0 goes to the absorbing state 1
    p[0, 1, 0] = 1.0
    p[1, 1, 1] = 1.0  # action 1 stays
    mdp = TabularMdp(p, 0.9, np.array([0.0, 1.0]))
    d = visitation(mdp, StochasticPolicy.deterministic([1, 1], 2)).values
    np.testing.assert_allclose(d, [0, 0, 0, 1], atol=1e-15)


def test_toy_visitation_at_stay_vertex():
    mdp = toy_mdp(0.9, [1.0, 0.0])
    d = visitation(mdp, StochasticPolicy.deterministic([1, 0], 2)).values
    np.testing.assert_allclose(d, state_major([0, 0, 1, 0]), atol=1e-15)
    pi = policy_from_visitation(Visitation(d, 2))
    np.testing.assert_allclose(pi.probs, [[0, 1], [0.5, 0.5]])


def test_visitation_lies_in_basis(rng):
    mdp = random_mdp(6, 3, 0.9, rng)
    basis = visitation_basis(mdp)
    assert membership_residual(basis, visitation(mdp, random_policy(6, 3, rng)).values) < 1e-8


def test_measure_rows_lie_in_shared_basis(rng):
    mdp = random_mdp(4, 3, 0.9, rng)
    smb = successor_measure_basis(mdp)
    m = successor_measure(mdp, random_policy(4, 3, rng)).tensor
    assert smb.row_residuals(m).max() < 1e-8


def test_q_from_sm_scales(rng):
    mdp = random_mdp(4, 2, 0.9, rng)
    m = successor_measure(mdp, random_policy(4, 2, rng))
    assert np.all(q_from_sm(m, RewardFunction(np.zeros((4, 2)))) == 0)
    np.testing.assert_allclose(q_from_sm(m, RewardFunction(np.ones((4, 2)))), 10.0, atol=1e-9)
    np.testing.assert_allclose(q_from_sm(m, RewardFunction(np.ones((4, 2))), normalized=True), 1.0, atol=1e-12)


@given(st.integers(0, 2**31))
def test_q_from_sm_equals_policy_evaluation(seed):
    r = np.random.default_rng(seed)
    mdp = random_mdp(5, 3, 0.9, r)
    pi = random_policy(5, 3, r)
    rew = RewardFunction(r.standard_normal((5, 3)))
    np.testing.assert_allclose(q_from_sm(successor_measure(mdp, pi), rew),
                               policy_evaluation(mdp, pi, rew), atol=1e-7)


def test_uniform_round_trip(rng):
    mdp = random_mdp(5, 3, 0.9, rng)
    pi = uniform_policy(mdp)
    np.testing.assert_allclose(policy_from_visitation(visitation(mdp, pi)).probs, pi.probs, atol=1e-9)


def test_random_round_trip(rng):
    mdp = random_mdp(5, 3, 0.9, rng)
    d = visitation(mdp, random_policy(5, 3, rng))
    d2 = visitation(mdp, policy_from_visitation(d))
    mass = d.table().sum(axis=1) > 1e-12
    np.testing.assert_allclose(d2.table()[mass], d.table()[mass], atol=1e-8)


def test_value_iteration_zero_reward(rng):
    mdp = random_mdp(4, 2, 0.9, rng)
    q, pi = value_iteration(mdp, RewardFunction(np.zeros((4, 2))))
    assert np.all(q == 0) and np.all(pi == 0)


def test_corridor_against_exhaustive_enumeration():
    # 3 cells, actions: left, right, stay; goal is the right cell
    p = np.zeros((3, 3, 3))
    for s in range(3):
        p[s, 0, max(s - 1, 0)] = p[s, 1, min(s + 1, 2)] = p[s, 2, s] = 1.0
    mdp = TabularMdp(p, 0.9)
    r = goal_reward(mdp, 2)
    q, greedy = value_iteration(mdp, r)
    values = np.array([(pi.probs * policy_evaluation(mdp, pi, r)).sum(axis=1)
                       for pi in enumerate_deterministic_policies(3, 3)])
    np.testing.assert_allclose(q.max(axis=1), values.max(axis=0), atol=1e-8)
    assert greedy[0] == greedy[1] == 1
    # at the goal moving right and staying tie; lowest index wins
    assert greedy[2] == 1


def test_four_room_greedy_reaches_goal_within_diameter():
    mdp = build_four_room(11, 0.99)
    for goal in sample_goals(mdp, 3, 7):
        _, acts = value_iteration(mdp, goal_reward(mdp, int(goal)))
        dist = distances_to(mdp, int(goal))
        diam = int(dist.max())
        for s in range(mdp.n_states):
            cur = s
            for _ in range(diam):
                if cur == goal:
                    break
                cur = int(np.argmax(mdp.transition[cur, acts[cur]]))
            assert cur == goal
