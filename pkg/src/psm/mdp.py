"""Finite MDPs, policies and rewards.

State-action pairs are flattened as ``s * n_actions + a`` everywhere in the
package. Transition tensors are stored as ``P[s, a, s']``; the ``P[s'][s][a]``
view used by the flow operators is just a transpose of that.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PROB_TOL = 1e-12


def _readonly(x: np.ndarray) -> np.ndarray:
    x = np.array(x, dtype=np.float64, copy=True)
    x.setflags(write=False)
    return x


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite reward-free MDP ``<S, A, P, gamma, mu>``.

    ``transition[s, a, s2]`` is the probability of landing in ``s2`` after
    taking ``a`` in ``s``. Construction does not validate; call
    :func:`validate_mdp` (or :meth:`checked`) for that.
    """

    transition: np.ndarray
    gamma: float
    initial_dist: np.ndarray | None = None

    def __post_init__(self) -> None:
        p = _readonly(self.transition)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {p.shape}")
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "gamma", float(self.gamma))
        if self.initial_dist is not None:
            object.__setattr__(self, "initial_dist", _readonly(self.initial_dist))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def n_pairs(self) -> int:
        return self.n_states * self.n_actions

    @property
    def pair_transition(self) -> np.ndarray:
        """``(S*A, S)`` matrix of next-state probabilities per flattened pair."""
        return self.transition.reshape(self.n_pairs, self.n_states)

    def pair_index(self, s: int, a: int) -> int:
        return s * self.n_actions + a

    def checked(self) -> "TabularMdp":
        report = validate_mdp(self)
        if not report.ok:
            raise ValueError(str(report))
        return self

    def with_initial(self, mu: np.ndarray | None) -> "TabularMdp":
        return TabularMdp(self.transition, self.gamma, mu)

    def with_gamma(self, gamma: float) -> "TabularMdp":
        return TabularMdp(self.transition, gamma, self.initial_dist)


@dataclass(frozen=True, eq=False)
class StochasticPolicy:
    """Row-stochastic matrix ``probs[s, a] = pi(a|s)``."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        p = _readonly(self.probs)
        if p.ndim != 2:
            raise ValueError("policy probs must be a (S, A) matrix")
        rows = p.sum(axis=1)
        if np.any(p < 0) or np.any(np.abs(rows - 1.0) > PROB_TOL):
            raise ValueError("policy rows must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", p)

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "StochasticPolicy":
        actions = np.asarray(actions, dtype=np.int64)
        probs = np.zeros((actions.size, n_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    def is_deterministic(self) -> bool:
        return bool(np.all((self.probs == 0.0) | (self.probs == 1.0)))

    def actions(self) -> np.ndarray:
        """Most likely action per state (lowest index on ties)."""
        return np.argmax(self.probs, axis=1)


@dataclass(frozen=True, eq=False)
class RewardFunction:
    """Reward table ``values[s, a]``; state-only rewards are broadcast."""

    values: np.ndarray
    state_only: bool = False

    def __post_init__(self) -> None:
        v = _readonly(self.values)
        if v.ndim != 2:
            raise ValueError("reward values must be a (S, A) table")
        if not np.all(np.isfinite(v)):
            raise ValueError("reward values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_state(cls, r_state, n_actions: int) -> "RewardFunction":
        r_state = np.asarray(r_state, dtype=np.float64)
        return cls(np.repeat(r_state[:, None], n_actions, axis=1), state_only=True)

    @property
    def flat(self) -> np.ndarray:
        """Reward over flattened state-action pairs."""
        return self.values.reshape(-1)

    @property
    def state_values(self) -> np.ndarray:
        """Per-state reward; only meaningful for state-only rewards."""
        if not self.state_only:
            raise ValueError("reward depends on the action")
        return self.values[:, 0]

    def scaled(self, c: float) -> "RewardFunction":
        return RewardFunction(self.values * c, self.state_only)

    def check_dims(self, mdp: TabularMdp) -> None:
        if self.values.shape != (mdp.n_states, mdp.n_actions):
            raise ValueError(
                f"reward shape {self.values.shape} does not match MDP "
                f"({mdp.n_states}, {mdp.n_actions})"
            )


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def __str__(self) -> str:
        if self.ok:
            return "mdp valid"
        return "mdp invalid:\n" + "\n".join(f"  - {v}" for v in self.violations)


def validate_mdp(mdp: TabularMdp) -> ValidationReport:
    """Check every TabularMdp invariant and list the violations with indices."""
    report = ValidationReport()
    p = mdp.transition
    if mdp.n_states < 1 or mdp.n_actions < 1:
        report.violations.append(f"empty state or action set: shape {p.shape}")
        return report
    if not np.all(np.isfinite(p)):
        for s, a, s2 in zip(*np.nonzero(~np.isfinite(p))):
            report.violations.append(f"non-finite P(s'={s2}|s={s},a={a})")
    for s, a, s2 in zip(*np.nonzero(p < 0)):
        report.violations.append(f"negative P(s'={s2}|s={s},a={a}) = {p[s, a, s2]!r}")
    sums = p.sum(axis=2)
    for s, a in zip(*np.nonzero(~(np.abs(sums - 1.0) <= PROB_TOL))):
        report.violations.append(
            f"transition (s={s}, a={a}) sums to {sums[s, a]!r}, expected 1"
        )
    if not (0.0 <= mdp.gamma < 1.0):
        report.violations.append(f"gamma={mdp.gamma!r} outside [0, 1)")
    mu = mdp.initial_dist
    if mu is not None:
        if mu.shape != (mdp.n_states,):
            report.violations.append(f"mu has shape {mu.shape}, expected ({mdp.n_states},)")
        else:
            for s in np.nonzero(mu < 0)[0]:
                report.violations.append(f"negative mu[{s}] = {mu[s]!r}")
            if not abs(mu.sum() - 1.0) <= PROB_TOL:
                report.violations.append(f"mu sums to {mu.sum()!r}, expected 1")
    return report


def check_distribution(mu, n: int, name: str = "mu") -> np.ndarray:
    mu = np.asarray(mu, dtype=np.float64)
    if mu.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {mu.shape}")
    if np.any(mu < 0) or abs(mu.sum() - 1.0) > PROB_TOL:
        raise ValueError(f"{name} must be a probability vector")
    return mu


def goal_reward(mdp: TabularMdp, goal: int) -> RewardFunction:
    """Indicator reward ``r(s) = 1[s == goal]`` broadcast over actions."""
    if not 0 <= goal < mdp.n_states:
        raise IndexError(f"goal {goal} out of range for {mdp.n_states} states")
    r = np.zeros(mdp.n_states)
    r[goal] = 1.0
    return RewardFunction.from_state(r, mdp.n_actions)


def uniform_policy(mdp: TabularMdp) -> StochasticPolicy:
    return StochasticPolicy(np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions))


def random_mdp(n_states: int, n_actions: int, gamma: float, rng: np.random.Generator,
               sparsity: float = 0.0) -> TabularMdp:
    """Random stochastic MDP from a normalized nonnegative tensor."""
    p = rng.random((n_states, n_actions, n_states))
    if sparsity > 0:
        p *= rng.random(p.shape) >= sparsity
        empty = p.sum(axis=2) == 0
        p[empty, rng.integers(0, n_states, size=empty.sum())] = 1.0
    p /= p.sum(axis=2, keepdims=True)
    mu = rng.random(n_states)
    return TabularMdp(p, gamma, mu / mu.sum())


def random_policy(n_states: int, n_actions: int, rng: np.random.Generator) -> StochasticPolicy:
    p = rng.random((n_states, n_actions))
    return StochasticPolicy(p / p.sum(axis=1, keepdims=True))


def toy_mdp(gamma: float, mu=None) -> TabularMdp:
    """Two-state, two-action MDP: action 0 switches state, action 1 stays."""
    p = np.zeros((2, 2, 2))
    p[0, 0, 1] = p[1, 0, 0] = 1.0
    p[0, 1, 0] = p[1, 1, 1] = 1.0
    return TabularMdp(p, gamma, None if mu is None else np.asarray(mu, dtype=np.float64))


# -- text serialization ------------------------------------------------------

def dumps_mdp(mdp: TabularMdp) -> str:
    lines = [f"mdp {mdp.n_states} {mdp.n_actions} {mdp.gamma!r}"]
    for row in mdp.pair_transition:
        nz = np.nonzero(row)[0]
        lines.append(" ".join(f"{j}:{float(row[j])!r}" for j in nz))
    if mdp.initial_dist is not None:
        lines.append("mu " + " ".join(repr(float(x)) for x in mdp.initial_dist))
    return "\n".join(lines) + "\n"


def loads_mdp(text: str) -> TabularMdp:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise ValueError("empty MDP file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "mdp":
        raise ValueError(f"bad MDP header: {lines[0]!r}")
    n_s, n_a, gamma = int(head[1]), int(head[2]), float(head[3])
    body = lines[1:]
    mu = None
    if body and body[-1].startswith("mu"):
        mu = np.array([float(x) for x in body[-1].split()[1:]])
        body = body[:-1]
    if len(body) != n_s * n_a:
        raise ValueError(f"expected {n_s * n_a} transition lines, found {len(body)}")
    p = np.zeros((n_s * n_a, n_s))
    for i, ln in enumerate(body):
        for tok in ln.split():
            j, prob = tok.split(":")
            p[i, int(j)] = float(prob)
    return TabularMdp(p.reshape(n_s, n_a, n_s), gamma, mu)


def save_mdp(mdp: TabularMdp, path) -> None:
    Path(path).write_text(dumps_mdp(mdp), encoding="utf-8")


def load_mdp(path) -> TabularMdp:
    return loads_mdp(Path(path).read_text(encoding="utf-8"))
