"""Pure numpy kernels; same arithmetic as the compiled ``_kernels`` module.

Sampled training draws transitions ``(s, a, s')`` and sums over every target
state ``s+`` with weights ``rho(s+)``, so each update touches the contiguous
``(S, d)`` block of one state-action pair.

Targets stay an exact exponential moving average without a dense pass per
step: a block whose online value has not changed for ``k`` steps catches up
with ``t = tau^k t + (1 - tau^k) x`` right before it is read or written.
``last_*`` hold the step each target block is synced to.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def sync_rows(x, t, last, rows, upto: int, tau: float) -> None:
    """Bring ``t[rows]`` up to step ``upto`` (``rows`` unique, leading axis)."""
    k = upto - last[rows]
    if not np.any(k > 0):
        return
    keep = (tau ** k.astype(np.float64)).reshape((-1,) + (1,) * (x.ndim - 1))
    t[rows] = keep * t[rows] + (1.0 - keep) * x[rows]
    last[rows] = upto


def sync_all(phi, bias, w, phi_t, bias_t, w_t, last_blk, last_w, upto: int, tau: float) -> None:
    _sync_blocks(phi, bias, phi_t, bias_t, last_blk, np.arange(phi.shape[0]), upto, tau)
    sync_rows(w, w_t, last_w, np.arange(w.shape[0]), upto, tau)


def _sync_blocks(phi, bias, phi_t, bias_t, last_blk, blocks, upto, tau):
    blocks = np.unique(blocks)
    sync_rows(bias, bias_t, last_blk.copy(), blocks, upto, tau)
    sync_rows(phi, phi_t, last_blk, blocks, upto, tau)


def ortho_terms(po: np.ndarray):
    """Unbiased ``||E[phi phi^T] - I||_F^2`` from rows ``po`` and its gradient.

    Uses distinct pairs only: ``mean_{i!=j} (phi_i.phi_j)^2 - 2 mean_i |phi_i|^2 + d``.
    """
    n, d = po.shape
    gram = po @ po.T
    diag = np.diag(gram).copy()
    np.fill_diagonal(gram, 0.0)
    pairs = n * (n - 1)
    value = float(np.sum(gram * gram)) / pairs - 2.0 * float(diag.sum()) / n + d
    grad = (4.0 / pairs) * (gram @ po) - (4.0 / n) * po
    return value, grad


def sampled_step(phi, bias, w, phi_t, bias_t, w_t, last_blk, last_w, actions, rho_s,
                 sa, s, s_next, z, o_sa, o_sp, step: int, n_actions: int,
                 gamma: float, lr: float, lr_w: float, tau: float, ortho_weight: float):
    """One SGD step; returns ``(psm_loss, ortho_penalty)``.

    ``phi`` is ``(S*A, S, d)``, ``bias`` is ``(S*A, S)``, ``w`` is ``(K, d)``.
    Transition ``i`` is ``(s_i, a_i, s'_i)`` with ``sa_i = s_i*A + a_i`` and
    pool index ``z_i``; ``(o_sa, o_sp)`` index rows for the orthonormality term.
    """
    nb = sa.shape[0]
    inv_nb = 1.0 / nb
    prev = step - 1
    idx = np.arange(nb)
    tb = s_next * n_actions + actions[z, s_next]

    # reads, all at the pre-step parameters
    _sync_blocks(phi, bias, phi_t, bias_t, last_blk, tb, prev, tau)
    sync_rows(w, w_t, last_w, np.unique(z), prev, tau)
    wz = w[z]
    pb = phi[sa]
    m = np.einsum("bsd,bd->bs", pb, wz) + bias[sa]
    tv = np.einsum("bsd,bd->bs", phi_t[tb], w_t[z]) + bias_t[tb]
    delta = m - gamma * tv
    md = m[idx, s]
    loss = float(np.sum((0.5 * delta * delta) @ rho_s - (1.0 - gamma) * md)) * inv_nb
    coef = (rho_s[None, :] * delta) * inv_nb
    c0 = (1.0 - gamma) * inv_nb
    g_w = np.einsum("bs,bsd->bd", coef, pb) - c0 * pb[idx, s]

    ortho = 0.0
    n_o = o_sa.shape[0]
    if ortho_weight > 0 and n_o > 1:
        ortho, g_o = ortho_terms(phi[o_sa, o_sp])

    # writes
    _sync_blocks(phi, bias, phi_t, bias_t, last_blk, np.concatenate([sa, o_sa]), prev, tau)
    sync_rows(w, w_t, last_w, np.unique(z), prev, tau)
    np.add.at(phi, sa, (-lr) * (coef[:, :, None] * wz[:, None, :]))
    np.add.at(phi, (sa, s), (lr * c0) * wz)
    if ortho_weight > 0 and n_o > 1:
        np.add.at(phi, (o_sa, o_sp), (-lr * ortho_weight) * g_o)
    np.add.at(bias, sa, (-lr) * coef)
    np.add.at(bias, (sa, s), np.full(nb, lr * c0))
    np.add.at(w, z, (-lr_w) * g_w)
    return loss, ortho


def dual_gda(phi, bias, c, w, lam, eta_w: float, eta_l: float, iters: int, feas_tol: float):
    """Alternating projected descent/ascent on the hinge Lagrangian.

    Minimizes ``-c.w`` subject to ``phi w + bias >= 0``. Updates ``w`` and
    ``lam`` in place and returns ``(best_w, best_obj, final_violation, iters_run)``;
    ``best_w`` is the best iterate with ``min(phi w + bias) >= -feas_tol``
    (``None`` if none was feasible).
    """
    best_w, best_obj = None, -np.inf
    viol = np.inf
    for _ in range(iters):
        v = phi @ w + bias
        neg = np.maximum(-v, 0.0)
        viol = float(neg.sum())
        if -float(v.min()) <= feas_tol:
            obj = float(c @ w)
            if obj > best_obj:
                best_obj, best_w = obj, w.copy()
        lam += eta_l * neg
        active = v <= 0.0
        grad = -c - lam[active] @ phi[active]
        w -= eta_w * grad
    return best_w, best_obj, viol, iters
