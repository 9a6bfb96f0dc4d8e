"""Successor features as a by-product of a proto successor measure.

A density table ``m(s,a,s+) = phi(s,a,s+) . w + b(s,a,s+)`` that factors as
``phi_psi(s,a)^T varphi(s+)`` over the target axis gives successor features
``psi(s,a) = phi_psi(s,a) [w; 1]`` for the state feature
``varphi^T (E_rho[varphi varphi^T])^{-1}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flow import AffineBasis
from .model import PsmModel
from .oracle import SuccessorMeasure


class RankCapacityError(ValueError):
    """Requested factorization rank exceeds what the tensor can hold."""


@dataclass(frozen=True, eq=False)
class SfDecomposition:
    phi_psi: np.ndarray  # (S*A, k, d+1); last slice carries the bias
    varphi: np.ndarray  # (S, k)
    rho_s: np.ndarray  # (S,)
    error: float  # max abs reconstruction error of the folded table

    @property
    def rank(self) -> int:
        return self.varphi.shape[1]

    def reconstruct(self) -> np.ndarray:
        """Folded density table ``(S*A, S, d+1)`` rebuilt from the factors."""
        return np.einsum("pkd,sk->psd", self.phi_psi, self.varphi)

    def psi(self, w) -> np.ndarray:
        """Successor features ``(S*A, k)`` of the policy with coordinates ``w``."""
        wf = np.append(np.asarray(w, dtype=np.float64), 1.0)
        return self.phi_psi @ wf

    def feature_covariance(self) -> np.ndarray:
        return (self.varphi * self.rho_s[:, None]).T @ self.varphi

    def state_features(self) -> np.ndarray:
        """``varphi(s)^T C^{-1}`` with ``C = E_rho[varphi varphi^T]``, as ``(S, k)``."""
        return np.linalg.solve(self.feature_covariance(), self.varphi.T).T


def _density_tables(source, rho_s):
    if isinstance(source, PsmModel):
        return source.phi, source.bias, source.rho_s
    if rho_s is None:
        raise ValueError("rho_s is required unless the source is a PsmModel")
    rho_s = np.asarray(rho_s, dtype=np.float64)
    if np.any(rho_s <= 0):
        raise ValueError("rho_s must be positive")
    n_s = rho_s.size
    if isinstance(source, AffineBasis):
        # measure units -> density units
        phi = source.basis.reshape(-1, n_s, source.dim) / rho_s[None, :, None]
        bias = source.bias.reshape(-1, n_s) / rho_s[None, :]
        return phi, bias, rho_s
    phi, bias = source
    return np.asarray(phi, dtype=np.float64), np.asarray(bias, dtype=np.float64), rho_s


def sf_decompose(source, rank: int | None = None, rho_s=None) -> SfDecomposition:
    """Factor the target axis by truncated SVD of the ``(S*A*(d+1), S)`` unfolding.

    ``source`` is a ``PsmModel``, a state-only ``AffineBasis`` in measure
    units, or a ``(phi, bias)`` pair of density tables; the latter two need
    ``rho_s``. ``rank`` defaults to the numerical rank.
    """
    phi, bias, rho = _density_tables(source, rho_s)
    folded = np.concatenate([phi, bias[:, :, None]], axis=2)  # (P, S, d+1)
    n_p, n_s, df = folded.shape
    unfold = folded.transpose(0, 2, 1).reshape(n_p * df, n_s)
    u, sv, vt = np.linalg.svd(unfold, full_matrices=False)
    capacity = min(unfold.shape)
    if rank is None:
        tol = max(unfold.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
        rank = max(int(np.sum(sv > tol)), 1)
    if rank < 1 or rank > capacity:
        raise RankCapacityError(f"rank {rank} outside [1, {capacity}]")
    left = (u[:, :rank] * sv[:rank]).reshape(n_p, df, rank).transpose(0, 2, 1)
    varphi = vt[:rank].T
    dec = SfDecomposition(np.ascontiguousarray(left), np.ascontiguousarray(varphi), rho, 0.0)
    err = float(np.max(np.abs(dec.reconstruct() - folded))) if folded.size else 0.0
    return SfDecomposition(dec.phi_psi, dec.varphi, rho, err)


def successor_features(measure, features) -> np.ndarray:
    """``psi(s,a) = sum_s+ M(s,a,s+) feature(s+)``.

    ``measure`` is a ``SuccessorMeasure`` or a state-only ``(S*A, S)`` table.
    """
    m = measure.state_only() if isinstance(measure, SuccessorMeasure) else np.asarray(measure)
    f = np.asarray(features, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    if f.shape[0] != m.shape[1]:
        raise ValueError(f"features have {f.shape[0]} rows, measure has {m.shape[1]} targets")
    return m @ f


def contract_basis(basis: AffineBasis, n_states: int, features) -> AffineBasis:
    """Affine set of successor features induced by a state-only measure basis."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    phi = basis.basis.reshape(-1, n_states, basis.dim)
    cols = np.einsum("psd,sk->pkd", phi, f).reshape(-1, basis.dim)
    bias = (basis.bias.reshape(-1, n_states) @ f).reshape(-1)
    return AffineBasis(cols, bias)
