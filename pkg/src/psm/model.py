"""Learned proto successor measure: shared tables ``(Phi, b)`` plus per-policy ``w``.

The model stores densities ``m(s, a, s+) = Phi(s, a, s+) . w + b(s, a, s+)``
relative to the dataset state density ``rho_s``; the measure itself is
``M = m * rho_s``. Tables are state-only over the target axis.
"""

from __future__ import annotations

import dataclasses
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codebook import HASH_SPEC, PolicyCodebook, sample_seeds

MODEL_MAGIC = b"PSMM1"
EMBED_DIM = 64


@dataclass(frozen=True)
class PsmConfig:
    d: int = 64
    steps: int = 20000
    gamma: float = 0.98
    mode: str = "sampled"  # exact | sampled
    w_mode: str = "tabular"  # tabular | amortized
    optimizer: str = "sgd"  # sgd | adam (adam: exact mode only)
    lr: float = 0.05
    lr_w: float = 0.05
    batch_size: int = 64
    policies_per_step: int = 32
    pool_size: int = 1024
    momentum: float = 0.99
    ortho_weight: float = 1.0
    ortho_batch: int = 64
    init_scale: float = 0.1

    def validate(self) -> "PsmConfig":
        if self.d < 1:
            raise ValueError("d must be at least 1")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.mode not in ("exact", "sampled"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.w_mode not in ("tabular", "amortized"):
            raise ValueError(f"unknown w_mode {self.w_mode!r}")
        if self.w_mode == "amortized" and self.mode != "exact":
            raise ValueError("the amortized w head is only available in exact mode")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.optimizer == "adam" and self.mode != "exact":
            raise ValueError("adam is only available in exact mode")
        if self.batch_size < 1 or self.policies_per_step < 1 or self.pool_size < 1:
            raise ValueError("batch sizes and pool size must be positive")
        if self.policies_per_step > self.batch_size and self.mode == "sampled":
            raise ValueError("policies_per_step may not exceed batch_size")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.ortho_weight < 0 or self.ortho_batch < 0:
            raise ValueError("orthonormality settings must be nonnegative")
        if self.lr <= 0 or self.lr_w <= 0:
            raise ValueError("learning rates must be positive")
        return self

    def to_lines(self) -> list[str]:
        return [f"{f.name}={getattr(self, f.name)!r}" for f in dataclasses.fields(self)]

    @classmethod
    def from_mapping(cls, values: dict) -> "PsmConfig":
        kw = {}
        for f in dataclasses.fields(cls):
            if f.name in values:
                raw = values[f.name]
                kw[f.name] = raw.strip("'\"") if f.type == "str" else type(f.default)(raw)
        return cls(**kw).validate()


def seed_embedding(seeds) -> np.ndarray:
    """Fixed +-1/sqrt(64) embedding from the 64 bits of each seed."""
    seeds = np.asarray(seeds, dtype=np.uint64).reshape(-1, 1)
    bits = (seeds >> np.arange(EMBED_DIM, dtype=np.uint64)[None, :]) & np.uint64(1)
    return (2.0 * bits.astype(np.float64) - 1.0) / np.sqrt(EMBED_DIM)


@dataclass(eq=False)
class PsmModel:
    config: PsmConfig
    n_states: int
    n_actions: int
    rho_s: np.ndarray  # (S,) dataset state density
    seeds: np.ndarray  # (K,) uint64
    phi: np.ndarray  # (S*A, S, d)
    bias: np.ndarray  # (S*A, S)
    w_param: np.ndarray  # (K, d) tabular or (64, d) amortized head
    phi_t: np.ndarray
    bias_t: np.ndarray
    w_param_t: np.ndarray
    rng_seed: int = 0
    loss_curve: np.ndarray = field(default_factory=lambda: np.zeros(0))
    hash_spec: str = HASH_SPEC

    @property
    def gamma(self) -> float:
        return self.config.gamma

    @property
    def d(self) -> int:
        return self.phi.shape[2]

    @property
    def n_pairs(self) -> int:
        return self.n_states * self.n_actions

    def action_table(self) -> np.ndarray:
        return PolicyCodebook(self.n_actions, self.hash_spec).action_table(self.seeds, self.n_states)

    def policy_w(self, target: bool = False) -> np.ndarray:
        """``(K, d)`` matrix of ``w(z)`` for every pool seed."""
        param = self.w_param_t if target else self.w_param
        if self.config.w_mode == "amortized":
            return seed_embedding(self.seeds) @ param
        return param

    def density(self, w) -> np.ndarray:
        """``m = Phi w + b`` as an ``(S*A, S)`` table."""
        return self.phi @ np.asarray(w, dtype=np.float64) + self.bias

    def measure(self, w) -> np.ndarray:
        """Reconstructed state-only successor measure ``M = m * rho_s``."""
        return self.density(w) * self.rho_s[None, :]

    def measure_basis(self) -> tuple[np.ndarray, np.ndarray]:
        """``(Phi_M, b_M)`` in measure units, flattened to ``(S*A*S, d)``."""
        scale = self.rho_s[None, :, None]
        return ((self.phi * scale).reshape(-1, self.d),
                (self.bias * self.rho_s[None, :]).reshape(-1))

    def folded(self) -> np.ndarray:
        """``[Phi | b]`` with the bias as a trailing column (w gets a trailing 1)."""
        return np.concatenate([self.phi, self.bias[:, :, None]], axis=2)

    def copy(self) -> "PsmModel":
        arrays = {k: getattr(self, k).copy() for k in
                  ("rho_s", "seeds", "phi", "bias", "w_param", "phi_t", "bias_t", "w_param_t",
                   "loss_curve")}
        return dataclasses.replace(self, **arrays)

    def sync_targets(self) -> None:
        self.phi_t = self.phi.copy()
        self.bias_t = self.bias.copy()
        self.w_param_t = self.w_param.copy()


def init_model(config: PsmConfig, n_states: int, n_actions: int, rho_s, rng_seed: int) -> PsmModel:
    config.validate()
    rho_s = np.asarray(rho_s, dtype=np.float64)
    if np.any(rho_s <= 0):
        raise ValueError("every state needs positive dataset density")
    rng = np.random.default_rng([rng_seed, 1])
    n_pairs = n_states * n_actions
    seeds = sample_seeds(config.pool_size, rng_seed)
    phi = config.init_scale * rng.standard_normal((n_pairs, n_states, config.d))
    bias = np.zeros((n_pairs, n_states))
    rows = EMBED_DIM if config.w_mode == "amortized" else config.pool_size
    w = config.init_scale * rng.standard_normal((rows, config.d))
    return PsmModel(config, n_states, n_actions, rho_s, seeds, phi, bias, w,
                    phi.copy(), bias.copy(), w.copy(), rng_seed)


_TABLES = ("rho_s", "phi", "bias", "w_param", "phi_t", "bias_t", "w_param_t", "loss_curve")


def dumps_model(model: PsmModel) -> bytes:
    header = model.config.to_lines() + [
        f"n_states={model.n_states}",
        f"n_actions={model.n_actions}",
        f"rng_seed={model.rng_seed}",
        f"hash_spec={model.hash_spec}",
        f"pool={model.seeds.size}",
        f"w_rows={model.w_param.shape[0]}",
        f"curve={model.loss_curve.size}",
        "seeds=" + ",".join(f"{int(x):016x}" for x in model.seeds),
    ]
    block = ("\n".join(header) + "\n").encode("utf-8")
    out = io.BytesIO()
    out.write(MODEL_MAGIC)
    out.write(struct.pack("<Q", len(block)))
    out.write(block)
    for name in _TABLES:
        out.write(np.ascontiguousarray(getattr(model, name), dtype="<f8").tobytes())
    return out.getvalue()


def loads_model(data: bytes) -> PsmModel:
    if data[:5] != MODEL_MAGIC:
        raise ValueError("not a PSMM1 model file")
    (n,) = struct.unpack_from("<Q", data, 5)
    block = data[13:13 + n].decode("utf-8")
    kv = dict(line.split("=", 1) for line in block.splitlines() if line)
    config = PsmConfig.from_mapping(kv)
    n_s, n_a = int(kv["n_states"]), int(kv["n_actions"])
    k, rows, curve = int(kv["pool"]), int(kv["w_rows"]), int(kv["curve"])
    seeds = np.array([int(x, 16) for x in kv["seeds"].split(",")], dtype=np.uint64)
    if seeds.size != k:
        raise ValueError("seed list length mismatch")
    d, n_pairs = config.d, n_s * n_a
    shapes = {
        "rho_s": (n_s,), "phi": (n_pairs, n_s, d), "bias": (n_pairs, n_s),
        "w_param": (rows, d), "phi_t": (n_pairs, n_s, d), "bias_t": (n_pairs, n_s),
        "w_param_t": (rows, d), "loss_curve": (curve,),
    }
    pos = 13 + n
    arrays = {}
    for name in _TABLES:
        count = int(np.prod(shapes[name]))
        arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shapes[name]).copy()
        pos += 8 * count
    if pos != len(data):
        raise ValueError("trailing or missing bytes in model file")
    return PsmModel(config, n_s, n_a, arrays["rho_s"], seeds, arrays["phi"], arrays["bias"],
                    arrays["w_param"], arrays["phi_t"], arrays["bias_t"], arrays["w_param_t"],
                    int(kv["rng_seed"]), arrays["loss_curve"], kv["hash_spec"])


def save_model(model: PsmModel, path) -> None:
    Path(path).write_bytes(dumps_model(model))


def load_model(path) -> PsmModel:
    return loads_model(Path(path).read_bytes())
