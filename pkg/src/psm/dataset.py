"""Reward-free offline datasets of ``(s, a, s')`` transitions."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mdp import StochasticPolicy, TabularMdp, uniform_policy


@dataclass(frozen=True, eq=False)
class OfflineDataset:
    """Transitions plus their empirical joint density.

    ``weights[s*A + a, s']`` is the empirical probability of the transition
    ``(s, a, s')``; ``rho_sa`` and ``rho_s`` are its marginals. Datasets built
    with :meth:`exact` carry the expected density and no records.
    """

    n_states: int
    n_actions: int
    weights: np.ndarray
    records: np.ndarray | None = None

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (self.n_states * self.n_actions, self.n_states):
            raise ValueError(f"weights shape {w.shape} does not match dataset dims")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("dataset density must be nonnegative and sum to 1")
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_records(cls, records, n_states: int, n_actions: int) -> "OfflineDataset":
        rec = np.asarray(records, dtype=np.int64).reshape(-1, 3)
        if rec.shape[0] == 0:
            raise ValueError("dataset needs at least one transition")
        s, a, s2 = rec.T
        if (s.min() < 0 or s.max() >= n_states or a.min() < 0 or a.max() >= n_actions
                or s2.min() < 0 or s2.max() >= n_states):
            raise ValueError("record index out of range")
        counts = np.zeros((n_states * n_actions, n_states))
        np.add.at(counts, (s * n_actions + a, s2), 1.0)
        return cls(n_states, n_actions, counts / rec.shape[0], rec)

    @classmethod
    def exact(cls, mdp: TabularMdp, rho_sa=None) -> "OfflineDataset":
        """Infinite-data limit: ``rho(s,a) P(s'|s,a)`` (uniform ``rho`` by default)."""
        if rho_sa is None:
            rho_sa = np.full(mdp.n_pairs, 1.0 / mdp.n_pairs)
        rho_sa = np.asarray(rho_sa, dtype=np.float64).reshape(-1)
        return cls(mdp.n_states, mdp.n_actions, rho_sa[:, None] * mdp.pair_transition)

    @property
    def size(self) -> int:
        return 0 if self.records is None else int(self.records.shape[0])

    @property
    def rho_sa(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    @property
    def rho_s(self) -> np.ndarray:
        return self.rho_sa.reshape(self.n_states, self.n_actions).sum(axis=1)

    @property
    def p_hat(self) -> np.ndarray:
        """Empirical ``P(s'|s,a)``; rows of unseen pairs are zero."""
        mass = self.rho_sa[:, None]
        return np.divide(self.weights, mass, out=np.zeros_like(self.weights), where=mass > 0)

    def coverage(self) -> float:
        return float(np.mean(self.rho_sa > 0))

    def require_coverage(self, pairs=None) -> None:
        rho = self.rho_sa if pairs is None else self.rho_sa[pairs]
        if np.any(rho <= 0):
            raise ValueError("dataset has zero density on a required (s, a) pair")


def build_dataset(mdp: TabularMdp, collection_policy: StochasticPolicy | None,
                  n_transitions: int, rng_seed: int) -> OfflineDataset:
    """i.i.d. transitions: ``s`` uniform, ``a ~ policy(.|s)``, ``s' ~ P(.|s,a)``."""
    if n_transitions < 1:
        raise ValueError("n_transitions must be at least 1")
    if collection_policy is None:
        collection_policy = uniform_policy(mdp)
    rng = np.random.default_rng(rng_seed)
    s = rng.integers(mdp.n_states, size=n_transitions)
    a = _inverse_cdf(collection_policy.probs[s], rng.random(n_transitions))
    s2 = _inverse_cdf(mdp.transition[s, a], rng.random(n_transitions))
    return OfflineDataset.from_records(np.stack([s, a, s2], axis=1), mdp.n_states, mdp.n_actions)


def _inverse_cdf(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=1)
    idx = (cdf <= u[:, None]).sum(axis=1)
    # guard against round-off leaving u above the last cumulative value
    last = probs.shape[1] - 1 - np.argmax(probs[:, ::-1] > 0, axis=1)
    return np.minimum(idx, last)


def dumps_dataset(ds: OfflineDataset) -> str:
    if ds.records is None:
        raise ValueError("only record-backed datasets can be written")
    head = f"dataset {ds.n_states} {ds.n_actions} {ds.size}\n"
    body = "\n".join(f"{s} {a} {s2}" for s, a, s2 in ds.records.tolist())
    return head + body + "\n"


def loads_dataset(text: str) -> OfflineDataset:
    lines = text.split("\n")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "dataset":
        raise ValueError(f"bad dataset header: {lines[0]!r}")
    n_s, n_a, n = int(head[1]), int(head[2]), int(head[3])
    rec = np.loadtxt(lines[1:n + 1], dtype=np.int64, ndmin=2)
    if rec.shape != (n, 3):
        raise ValueError(f"expected {n} records, found {rec.shape[0]}")
    return OfflineDataset.from_records(rec, n_s, n_a)


def save_dataset(ds: OfflineDataset, path) -> None:
    Path(path).write_text(dumps_dataset(ds), encoding="utf-8")


def load_dataset(path) -> OfflineDataset:
    return loads_dataset(Path(path).read_text(encoding="utf-8"))
