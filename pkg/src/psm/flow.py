"""Bellman-flow operators and their policy-independent affine bases.

Every visitation distribution ``d`` of an MDP satisfies ``A d = (1-gamma) mu``
with ``A = S_sum - gamma P^T``. That system does not depend on the policy, so
the solution set is one affine set ``{Phi w + b}``; the successor measure
obeys the same operator with an indicator right-hand side per source pair.
"""

from __future__ import annotations

import io
import itertools
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mdp import TabularMdp, check_distribution

RANK_RTOL = 1e-10
BASIS_MAGIC = b"PSMB1"


class RankDeficientError(ValueError):
    """The flow operator lost row rank (degenerate gamma or malformed P)."""


class UnboundedRegionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FlowOperator:
    matrix: np.ndarray
    rhs: np.ndarray
    gamma: float
    n_actions: int

    @property
    def n_states(self) -> int:
        return self.matrix.shape[0]

    def residual(self, d: np.ndarray) -> float:
        return float(np.linalg.norm(self.matrix @ d - self.rhs))


@dataclass(frozen=True, eq=False)
class AffineBasis:
    """Affine set ``{basis @ w + bias}``; ``basis`` is ``(n, d)``."""

    basis: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        phi = np.asarray(self.basis, dtype=np.float64)
        if phi.ndim == 1:
            phi = phi[:, None]
        b = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if phi.shape[0] != b.shape[0]:
            raise ValueError(f"basis rows {phi.shape[0]} != bias length {b.shape[0]}")
        object.__setattr__(self, "basis", phi)
        object.__setattr__(self, "bias", b)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def size(self) -> int:
        return self.basis.shape[0]

    def reconstruct(self, w) -> np.ndarray:
        return self.basis @ np.asarray(w, dtype=np.float64) + self.bias

    def coordinates(self, x) -> np.ndarray:
        """Least-squares affine coordinates of ``x``."""
        return np.linalg.lstsq(self.basis, np.asarray(x) - self.bias, rcond=None)[0]

    def folded(self) -> np.ndarray:
        """Basis with the bias appended as a last column (weight fixed to 1)."""
        return np.hstack([self.basis, self.bias[:, None]])


def build_flow_operator(mdp: TabularMdp, mu=None) -> FlowOperator:
    """Operator ``S_sum - gamma P^T`` with right-hand side ``(1-gamma) mu``."""
    if mu is None:
        mu = mdp.initial_dist
    if mu is None:
        raise ValueError("an initial distribution is required")
    mu = check_distribution(mu, mdp.n_states)
    return FlowOperator(_flow_matrix(mdp), (1.0 - mdp.gamma) * mu, mdp.gamma, mdp.n_actions)


def build_sm_flow_operator(mdp: TabularMdp, source: tuple[int, int]) -> FlowOperator:
    """Flow operator for the successor measure row of ``source = (s, a)``.

    Summing the measure recursion over the target action leaves an indicator
    of the source state on the right-hand side, so only ``s`` matters there.
    """
    s, a = source
    if not (0 <= s < mdp.n_states and 0 <= a < mdp.n_actions):
        raise IndexError(f"source {source} out of range")
    rhs = np.zeros(mdp.n_states)
    rhs[s] = 1.0 - mdp.gamma
    return FlowOperator(_flow_matrix(mdp), rhs, mdp.gamma, mdp.n_actions)


def _flow_matrix(mdp: TabularMdp) -> np.ndarray:
    n_s, n_a = mdp.n_states, mdp.n_actions
    a = np.zeros((n_s, n_s * n_a))
    a[np.repeat(np.arange(n_s), n_a), np.arange(n_s * n_a)] = 1.0
    a -= mdp.gamma * mdp.pair_transition.T
    return a


def _null_space(matrix: np.ndarray):
    u, sv, vt = np.linalg.svd(matrix, full_matrices=True)
    tol = RANK_RTOL * (sv[0] if sv.size else 0.0)
    rank = int(np.sum(sv > tol))
    return u, sv, vt, rank


def extract_affine_basis(op: FlowOperator) -> AffineBasis:
    """Orthonormal null-space basis plus the minimum-norm particular solution."""
    u, sv, vt, rank = _null_space(op.matrix)
    if rank < op.matrix.shape[0]:
        raise RankDeficientError(
            f"flow operator has rank {rank} < {op.matrix.shape[0]} rows"
        )
    bias = vt[:rank].T @ ((u[:, :rank].T @ op.rhs) / sv[:rank])
    return AffineBasis(vt[rank:].T.copy(), bias)


def visitation_basis(mdp: TabularMdp, mu=None) -> AffineBasis:
    return extract_affine_basis(build_flow_operator(mdp, mu))


@dataclass(frozen=True, eq=False)
class SuccessorMeasureBasis:
    """Exact basis for the four-argument measure ``M[(s,a), (s+,a+)]``.

    All source rows share one target-space basis; only the bias depends on
    the source, through its state.
    """

    target_basis: np.ndarray
    biases: np.ndarray  # (S*A sources, S*A targets)

    def row(self, source_pair: int) -> AffineBasis:
        return AffineBasis(self.target_basis, self.biases[source_pair])

    def row_residuals(self, tensor: np.ndarray) -> np.ndarray:
        diff = tensor - self.biases
        proj = diff @ self.target_basis @ self.target_basis.T
        return np.linalg.norm(diff - proj, axis=1)


def successor_measure_basis(mdp: TabularMdp) -> SuccessorMeasureBasis:
    n_s, n_a = mdp.n_states, mdp.n_actions
    start = extract_affine_basis(build_sm_flow_operator(mdp, (0, 0)))
    state_biases = np.empty((n_s, n_s * n_a))
    for s in range(n_s):
        state_biases[s] = extract_affine_basis(build_sm_flow_operator(mdp, (s, 0))).bias
    return SuccessorMeasureBasis(start.basis, np.repeat(state_biases, n_a, axis=0))


def state_measure_basis(mdp: TabularMdp) -> AffineBasis:
    """Affine set containing every state-only successor measure ``M(s,a,s+)``.

    The measure factors as ``(1-gamma) e_s + gamma sum_s' P(s'|s,a) V(s', .)``
    where each row ``V(s', .)`` is the state marginal of a visitation
    distribution started at ``s'``. Each of those lies in its own flow affine
    set, so the whole tensor (flattened ``(s*A + a) * S + s+``) is an affine
    image of their product. Columns are reduced to an orthonormal set.
    """
    n_s, n_a = mdp.n_states, mdp.n_actions
    op = _flow_matrix(mdp)
    u, sv, vt, rank = _null_space(op)
    if rank < n_s:
        raise RankDeficientError(f"flow operator has rank {rank} < {n_s}")
    null = vt[rank:].T
    pinv = vt[:rank].T @ (u[:, :rank].T / sv[:rank, None])
    marg = np.zeros((n_s, n_s * n_a))
    marg[np.repeat(np.arange(n_s), n_a), np.arange(n_s * n_a)] = 1.0
    dir_v = marg @ null                                 # (S, k) state-marginal directions
    bias_v = (marg @ pinv * (1.0 - mdp.gamma)).T        # row s0: marginal of bias for e_s0
    p = mdp.pair_transition                             # (SA, S)
    # column (s0, j): gamma * P(s0|sa) * dir_v[:, j]
    cols = mdp.gamma * np.einsum("ps,tj->ptsj", p, dir_v).reshape(n_s * n_a * n_s, -1)
    bias = (1.0 - mdp.gamma) * np.repeat(np.eye(n_s), n_a, axis=0) + mdp.gamma * p @ bias_v
    uu, ss, _ = np.linalg.svd(cols, full_matrices=False)
    keep = ss > RANK_RTOL * max(cols.shape) * (ss[0] if ss.size else 0.0)
    return AffineBasis(uu[:, keep], bias.reshape(-1))


def membership_residual(basis: AffineBasis, d) -> float:
    """Distance from ``d`` to the affine set (0 iff ``d`` is a member)."""
    diff = np.asarray(d, dtype=np.float64) - basis.bias
    if basis.dim == 0:
        return float(np.linalg.norm(diff))
    coef = np.linalg.lstsq(basis.basis, diff, rcond=None)[0]
    return float(np.linalg.norm(diff - basis.basis @ coef))


def span_residual(basis: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Per-column residual of unit-normalized ``vectors`` against ``span(basis)``."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64).T).T
    norms = np.linalg.norm(vectors, axis=0)
    unit = vectors / np.where(norms > 0, norms, 1.0)
    q, _ = np.linalg.qr(basis)
    return np.linalg.norm(unit - q @ (q.T @ unit), axis=0)


def mutual_residual(a: AffineBasis, b: AffineBasis) -> float:
    """Largest residual of columns and bias offsets projected each way.

    Two bases describe the same affine set iff this is ~0; the particular
    columns (any rotation of the span) do not matter.
    """
    if a.size != b.size:
        raise ValueError("bases live in different spaces")
    res = [
        span_residual(a.basis, b.basis).max(initial=0.0),
        span_residual(b.basis, a.basis).max(initial=0.0),
        membership_residual(a, b.bias),
        membership_residual(b, a.bias),
    ]
    return float(max(res))


def feasible_region_vertices(basis: AffineBasis, tol: float = 1e-9,
                             max_dim: int = 3) -> list[np.ndarray]:
    """Vertices of the polytope ``{w : basis @ w + bias >= 0}``.

    Intersects every ``dim``-subset of constraint rows and keeps the feasible
    solutions, so it is only offered for ``dim <= 3``.
    """
    from scipy.optimize import linprog

    d = basis.dim
    if d > max_dim:
        raise ValueError(f"vertex enumeration limited to dim <= {max_dim}, got {d}")
    phi, b = basis.basis, basis.bias
    if d == 0:
        return [np.zeros(0)] if b.min() >= -tol else []
    for i in range(d):
        for sign in (1.0, -1.0):
            c = np.zeros(d)
            c[i] = -sign
            res = linprog(c, A_ub=-phi, b_ub=b, bounds=[(None, None)] * d, method="highs")
            if res.status == 3:
                raise UnboundedRegionError("feasible region is unbounded")
            if res.status == 2:
                return []
    verts: list[np.ndarray] = []
    for rows in itertools.combinations(range(phi.shape[0]), d):
        sub = phi[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        w = np.linalg.solve(sub, -b[list(rows)])
        if np.min(phi @ w + b) < -tol:
            continue
        if not any(np.allclose(w, v, atol=1e-9) for v in verts):
            verts.append(w)
    return verts


# -- binary serialization ----------------------------------------------------

def dumps_basis(basis: AffineBasis) -> bytes:
    buf = io.BytesIO()
    buf.write(BASIS_MAGIC)
    buf.write(struct.pack("<QQ", basis.size, basis.dim))
    buf.write(np.ascontiguousarray(basis.basis, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(basis.bias, dtype="<f8").tobytes())
    return buf.getvalue()


def loads_basis(data: bytes) -> AffineBasis:
    if data[:5] != BASIS_MAGIC:
        raise ValueError("not a PSMB1 basis file")
    n, d = struct.unpack_from("<QQ", data, 5)
    off = 5 + 16
    phi = np.frombuffer(data, dtype="<f8", count=n * d, offset=off).reshape(n, d)
    off += 8 * n * d
    bias = np.frombuffer(data, dtype="<f8", count=n, offset=off)
    if off + 8 * n != len(data):
        raise ValueError("trailing or missing bytes in basis file")
    return AffineBasis(phi.astype(np.float64), bias.astype(np.float64))


def save_basis(basis: AffineBasis, path) -> None:
    Path(path).write_bytes(dumps_basis(basis))


def load_basis(path) -> AffineBasis:
    return loads_basis(Path(path).read_bytes())
