"""Discrete codebook of deterministic policies indexed by 64-bit seeds.

``action(z, s) = mix64(z + hash64(s)) mod |A|`` where both ``mix64`` and
``hash64`` are the SplitMix64 finalizer. Seeds for training come from the
SplitMix64 counter stream, so every value here is reproducible from its
constants alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import StochasticPolicy, TabularMdp

GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX_C1 = 0xBF58476D1CE4E5B9
MIX_C2 = 0x94D049BB133111EB
HASH_SPEC = "splitmix64-fmix:bf58476d1ce4e5b9,94d049bb133111eb/30,27,31;seq+9e3779b97f4a7c15"

_U64 = np.uint64


def fmix64(x) -> np.ndarray:
    """SplitMix64 finalizer on uint64 arrays (wrapping arithmetic)."""
    x = np.array(x, dtype=np.uint64, copy=True, ndmin=1)
    x ^= x >> _U64(30)
    x *= _U64(MIX_C1)
    x ^= x >> _U64(27)
    x *= _U64(MIX_C2)
    x ^= x >> _U64(31)
    return x


def hash64(s) -> np.ndarray:
    return fmix64(s)


@dataclass(frozen=True)
class PolicyCodebook:
    n_actions: int
    hash_spec: str = HASH_SPEC

    def __post_init__(self) -> None:
        if self.n_actions < 1:
            raise ValueError("n_actions must be positive")
        if self.hash_spec != HASH_SPEC:
            raise ValueError(f"unsupported hash spec {self.hash_spec!r}")

    def actions(self, seeds, states) -> np.ndarray:
        """Broadcast ``codebook_action`` over arrays of seeds and states."""
        z = np.asarray(seeds, dtype=np.uint64)
        s = np.asarray(states, dtype=np.uint64)
        z, s = np.broadcast_arrays(z, s)
        mixed = fmix64((z + hash64(s.ravel()).reshape(s.shape)).ravel()).reshape(z.shape)
        return (mixed % _U64(self.n_actions)).astype(np.int64)

    def action_table(self, seeds, n_states: int) -> np.ndarray:
        """``(len(seeds), n_states)`` table of codebook actions."""
        seeds = np.asarray(seeds, dtype=np.uint64).reshape(-1, 1)
        return self.actions(seeds, np.arange(n_states, dtype=np.uint64)[None, :])


def codebook_action(cb: PolicyCodebook, z: int, s: int) -> int:
    return int(cb.actions(np.uint64(z), np.uint64(s)).reshape(()))


def codebook_policy(cb: PolicyCodebook, z: int, mdp: TabularMdp) -> StochasticPolicy:
    if cb.n_actions != mdp.n_actions:
        raise ValueError("codebook and MDP disagree on the number of actions")
    return StochasticPolicy.deterministic(cb.action_table([z], mdp.n_states)[0], mdp.n_actions)


def sample_seeds(count: int, rng_seed: int) -> np.ndarray:
    """``count`` seeds from the SplitMix64 stream started at ``rng_seed``."""
    if count < 1:
        raise ValueError("count must be at least 1")
    base = np.uint64(rng_seed % 2**64)
    steps = np.arange(1, count + 1, dtype=np.uint64) * _U64(GOLDEN_GAMMA)
    return fmix64(base + steps)
