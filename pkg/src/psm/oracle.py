"""Exact ground truth: successor measures, visitations, values, optimal policies.

Successor measures carry the ``(1 - gamma)`` normalizer, so every row is a
probability distribution. ``M[(s,a), (s+,a+)]`` fixes the first action ``a``
and follows the policy afterwards.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .mdp import RewardFunction, StochasticPolicy, TabularMdp, check_distribution


@dataclass(frozen=True, eq=False)
class SuccessorMeasure:
    tensor: np.ndarray  # (S*A, S*A)
    gamma: float
    n_actions: int

    @property
    def n_states(self) -> int:
        return self.tensor.shape[0] // self.n_actions

    def state_only(self) -> np.ndarray:
        """``M(s, a, s+)`` as an ``(S*A, S)`` matrix (target action summed out)."""
        return self.tensor.reshape(self.tensor.shape[0], self.n_states, self.n_actions).sum(axis=2)


@dataclass(frozen=True, eq=False)
class Visitation:
    values: np.ndarray  # (S*A,)
    n_actions: int

    @property
    def n_states(self) -> int:
        return self.values.size // self.n_actions

    def table(self) -> np.ndarray:
        return self.values.reshape(self.n_states, self.n_actions)


def pair_chain(mdp: TabularMdp, pi: StochasticPolicy) -> np.ndarray:
    """``P_pi[(s,a), (s',a')] = P(s'|s,a) pi(a'|s')``."""
    p = mdp.pair_transition
    return (p[:, :, None] * pi.probs[None, :, :]).reshape(mdp.n_pairs, mdp.n_pairs)


def successor_measure(mdp: TabularMdp, pi: StochasticPolicy) -> SuccessorMeasure:
    chain = pair_chain(mdp, pi)
    n = mdp.n_pairs
    m = (1.0 - mdp.gamma) * np.linalg.solve(np.eye(n) - mdp.gamma * chain, np.eye(n))
    return SuccessorMeasure(m, mdp.gamma, mdp.n_actions)


def sm_flow_residual(mdp: TabularMdp, pi: StochasticPolicy, m: SuccessorMeasure) -> np.ndarray:
    """Entrywise residual of the successor-measure recursion."""
    rhs = (1.0 - mdp.gamma) * np.eye(mdp.n_pairs) + mdp.gamma * m.tensor @ pair_chain(mdp, pi)
    return np.abs(m.tensor - rhs)


def state_measure(mdp: TabularMdp, pi: StochasticPolicy) -> np.ndarray:
    return successor_measure(mdp, pi).state_only()


def visitation(mdp: TabularMdp, pi: StochasticPolicy, mu=None) -> Visitation:
    if mu is None:
        mu = mdp.initial_dist
    mu = check_distribution(mu, mdp.n_states)
    start = (mu[:, None] * pi.probs).reshape(-1)
    return Visitation(start @ successor_measure(mdp, pi).tensor, mdp.n_actions)


def q_from_sm(m: SuccessorMeasure, r: RewardFunction, normalized: bool = False) -> np.ndarray:
    """Action values ``M r``; divided by ``1 - gamma`` unless ``normalized``.

    The conventional scale matches discounted returns (and value iteration).
    """
    q = m.tensor @ r.flat
    if not normalized:
        q = q / (1.0 - m.gamma)
    return q.reshape(-1, m.n_actions)


def policy_from_visitation(d: Visitation, mass_tol: float = 1e-12) -> StochasticPolicy:
    """``pi(a|s) = d(s,a) / sum_a d(s,a)``; states without mass get uniform rows."""
    table = np.clip(d.table(), 0.0, None)
    mass = table.sum(axis=1, keepdims=True)
    uniform = np.full_like(table, 1.0 / d.n_actions)
    probs = np.where(mass > mass_tol, table / np.where(mass > mass_tol, mass, 1.0), uniform)
    return StochasticPolicy(probs / probs.sum(axis=1, keepdims=True))


def greedy(q: np.ndarray) -> np.ndarray:
    """Per-state argmax; ``np.argmax`` already breaks ties toward the lowest index."""
    return np.argmax(q, axis=1)


def bellman_optimality_residual(mdp: TabularMdp, r: RewardFunction, q: np.ndarray) -> float:
    target = r.values + mdp.gamma * mdp.transition @ q.max(axis=1)
    return float(np.max(np.abs(target - q)))


def value_iteration(mdp: TabularMdp, r: RewardFunction, tol: float = 1e-10,
                    max_iter: int = 1_000_000):
    """Optimal action values and the greedy policy (ties to the lowest action)."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    r.check_dims(mdp)
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_iter):
        q_new = r.values + mdp.gamma * mdp.transition @ q.max(axis=1)
        done = np.max(np.abs(q_new - q)) < tol * (1.0 - mdp.gamma) / 2.0
        q = q_new
        if done:
            break
    return q, greedy(q)


def policy_evaluation(mdp: TabularMdp, pi: StochasticPolicy, r: RewardFunction,
                      tol: float = 1e-12, max_iter: int = 1_000_000) -> np.ndarray:
    """Iterative evaluation of ``Q^pi`` on the conventional scale."""
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_iter):
        v = (pi.probs * q).sum(axis=1)
        q_new = r.values + mdp.gamma * mdp.transition @ v
        if np.max(np.abs(q_new - q)) < tol:
            return q_new
        q = q_new
    return q


def optimal_action_mask(q: np.ndarray, atol: float = 1e-9) -> np.ndarray:
    return q >= q.max(axis=1, keepdims=True) - atol


def enumerate_deterministic_policies(n_states: int, n_actions: int):
    for acts in itertools.product(range(n_actions), repeat=n_states):
        yield StochasticPolicy.deterministic(acts, n_actions)
