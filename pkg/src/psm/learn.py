"""PSM objective, its gradients, and the training loop.

Per codebook policy ``z`` the loss on density tables ``m = Phi w(z) + b`` is

    L_z = -(1 - gamma) E_{(s,a)~rho}[m(s,a,s)]
          + 1/2 E_{(s,a,s')~rho, s+~rho}[(m(s,a,s+) - gamma mbar(s',pi_z(s'),s+))^2]

with ``mbar`` built from the target tables (no gradient). Its fixed point is
``m = M^{pi_z} / rho_s`` for the normalized measure ``M``. The full objective
averages ``L_z`` over policies and adds ``ortho_weight * ||E[phi phi^T] - I||_F^2``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels_py, kernels
from .dataset import OfflineDataset
from .mdp import StochasticPolicy
from .model import PsmConfig, PsmModel, init_model, seed_embedding


class DivergenceError(RuntimeError):
    def __init__(self, message: str, step: int, diagnostics: dict):
        super().__init__(message)
        self.step = step
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class Minibatch:
    """Sampled transitions with pool indices, plus rows for the orthonormality term.

    The target state ``s+`` is not sampled: every transition is paired with
    all target states, weighted by ``rho(s+)``. ``(o_sa, o_sp)`` index
    independent ``(s*A + a, s+)`` rows drawn from the dataset.
    """

    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    z: np.ndarray
    o_sa: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    o_sp: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self) -> None:
        n = len(self.s)
        if n == 0:
            raise ValueError("empty minibatch")
        for name in ("a", "s_next", "z"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"minibatch field {name} has the wrong length")
        if len(self.o_sa) != len(self.o_sp):
            raise ValueError("orthonormality row indices differ in length")


@dataclass
class LossResult:
    value: float
    psm: float
    ortho: float
    residual: float
    grads: dict = field(default_factory=dict)


def _check_batch(model: PsmModel, z_batch) -> np.ndarray:
    z = np.asarray(z_batch, dtype=np.int64).reshape(-1)
    if z.size == 0:
        raise ValueError("empty policy batch")
    if z.min() < 0 or z.max() >= model.seeds.size:
        raise ValueError("policy index outside the seed pool")
    return z


def _w_rows(model: PsmModel, z: np.ndarray, target: bool = False) -> np.ndarray:
    param = model.w_param_t if target else model.w_param
    if model.config.w_mode == "amortized":
        return seed_embedding(model.seeds[z]) @ param
    return param[z]


def _w_param_grad(model: PsmModel, z: np.ndarray, g_rows: np.ndarray) -> np.ndarray:
    if model.config.w_mode == "amortized":
        return seed_embedding(model.seeds[z]).T @ g_rows
    g = np.zeros_like(model.w_param)
    np.add.at(g, z, g_rows)
    return g


def orthonormality_penalty(phi: np.ndarray, weights=None) -> tuple[float, np.ndarray]:
    """``||E_w[phi phi^T] - I||_F^2`` and its gradient w.r.t. ``phi``.

    ``phi`` is ``(..., d)``; ``weights`` broadcast over the leading axes
    (uniform if omitted).
    """
    d = phi.shape[-1]
    flat = phi.reshape(-1, d)
    if weights is None:
        wt = np.full(flat.shape[0], 1.0 / flat.shape[0])
    else:
        wt = np.broadcast_to(weights, phi.shape[:-1]).reshape(-1)
    cm = (flat * wt[:, None]).T @ flat - np.eye(d)
    grad = 4.0 * wt[:, None] * (flat @ cm)
    return float(np.sum(cm * cm)), grad.reshape(phi.shape)


def ortho_estimate(rows: np.ndarray) -> tuple[float, np.ndarray]:
    """Unbiased sample estimate of the penalty from i.i.d. rows (distinct pairs only)."""
    return _kernels_py.ortho_terms(rows)


def psm_loss(model: PsmModel, z_batch, data, ortho_weight: float | None = None) -> LossResult:
    """Objective and gradients for ``phi``, ``bias`` and ``w_param``.

    ``data`` is an :class:`OfflineDataset` (exact expectation under its
    density) or a :class:`Minibatch` (sample average). ``z_batch`` holds pool
    indices.
    """
    z = _check_batch(model, z_batch)
    lam = model.config.ortho_weight if ortho_weight is None else ortho_weight
    if isinstance(data, Minibatch):
        return _loss_sampled(model, data, lam)
    return _loss_exact(model, z, data, lam)


def _loss_exact(model: PsmModel, z: np.ndarray, ds: OfflineDataset, lam: float) -> LossResult:
    n_s, n_a, g = model.n_states, model.n_actions, model.gamma
    if (ds.n_states, ds.n_actions) != (n_s, n_a):
        raise ValueError("dataset and model dimensions differ")
    rho_sa, rho_s = ds.rho_sa, ds.rho_s
    if np.any(rho_s <= 0):
        raise ValueError("target states need positive density")
    nb, n_p, d = z.size, n_s * n_a, model.d
    wz, wt = _w_rows(model, z), _w_rows(model, z, target=True)
    acts = model.action_table()[z]  # (B, S)
    # (SA, S, B) layout keeps every contraction a plain matrix product
    m = (model.phi.reshape(-1, d) @ wz.T).reshape(n_p, n_s, nb) + model.bias[:, :, None]
    mt = (model.phi_t.reshape(-1, d) @ wt.T).reshape(n_p, n_s, nb) + model.bias_t[:, :, None]
    nxt_rows = np.arange(n_s)[:, None] * n_a + acts.T  # (S', B)
    vbar = mt[nxt_rows, :, np.arange(nb)[None, :]]  # (S', B, S+)
    vbar = vbar.transpose(0, 2, 1).reshape(n_s, -1)  # (S', S+ * B)
    tgt = (ds.weights @ vbar).reshape(n_p, n_s, nb)  # sum_s' W(sa,s') vbar(s',s+)
    sq = (ds.weights @ (vbar * vbar)).reshape(n_p, n_s, nb)
    own = np.repeat(np.arange(n_s), n_a)
    pairs = np.arange(n_p)
    diag = m[pairs, own]  # (SA, B)

    w_ns = rho_sa[:, None] * rho_s[None, :]
    td = 0.5 * (np.sum(w_ns[:, :, None] * (m * m)) - 2.0 * g * np.sum(rho_s[None, :, None] * m * tgt)
                + g * g * np.sum(rho_s[None, :, None] * sq))
    psm_val = (td - (1.0 - g) * float(rho_sa @ diag.sum(axis=1))) / nb

    gm = rho_s[None, :, None] * (rho_sa[:, None, None] * m - g * tgt)
    gm[pairs, own] -= (1.0 - g) * rho_sa[:, None]
    gm /= nb
    point = np.divide(tgt, rho_sa[:, None, None], out=np.zeros_like(tgt), where=rho_sa[:, None, None] > 0)
    resid_t = m - g * point
    resid_t[pairs, own] -= ((1.0 - g) / rho_s[own])[:, None]
    residual = float(np.sum(w_ns[:, :, None] * resid_t * resid_t)) / nb

    g_phi = (gm.reshape(-1, nb) @ wz).reshape(model.phi.shape)
    g_bias = gm.sum(axis=2)
    g_w = _w_param_grad(model, z, gm.reshape(-1, nb).T @ model.phi.reshape(-1, d))
    ortho = 0.0
    if lam > 0:
        ortho, g_o = orthonormality_penalty(model.phi, rho_sa[:, None] * rho_s[None, :])
        g_phi = g_phi + lam * g_o
    return LossResult(psm_val + lam * ortho, psm_val, ortho, residual,
                      {"phi": g_phi, "bias": g_bias, "w_param": g_w})


def _loss_sampled(model: PsmModel, mb: Minibatch, lam: float) -> LossResult:
    n_a, g = model.n_actions, model.gamma
    z = _check_batch(model, mb.z)
    nb = z.size
    rho_s = model.rho_s
    idx = np.arange(nb)
    s = np.asarray(mb.s)
    sa = s * n_a + np.asarray(mb.a)
    tb = np.asarray(mb.s_next) * n_a + model.action_table()[z, mb.s_next]
    wz, wt = _w_rows(model, z), _w_rows(model, z, target=True)
    pb = model.phi[sa]
    m = np.einsum("bsd,bd->bs", pb, wz) + model.bias[sa]
    tv = np.einsum("bsd,bd->bs", model.phi_t[tb], wt) + model.bias_t[tb]
    delta = m - g * tv
    psm_val = float(np.mean((0.5 * delta * delta) @ rho_s - (1.0 - g) * m[idx, s]))

    coef = rho_s[None, :] * delta / nb
    c0 = (1.0 - g) / nb
    g_phi = np.zeros_like(model.phi)
    g_bias = np.zeros_like(model.bias)
    np.add.at(g_phi, sa, coef[:, :, None] * wz[:, None, :])
    np.add.at(g_phi, (sa, s), -c0 * wz)
    np.add.at(g_bias, sa, coef)
    np.add.at(g_bias, (sa, s), np.full(nb, -c0))
    g_w = _w_param_grad(model, z, np.einsum("bs,bsd->bd", coef, pb) - c0 * pb[idx, s])
    ortho = 0.0
    if lam > 0 and len(mb.o_sa) > 1:
        ortho, g_o = ortho_estimate(model.phi[mb.o_sa, mb.o_sp])
        np.add.at(g_phi, (mb.o_sa, mb.o_sp), lam * g_o)
    residual = float(np.mean((delta * delta) @ rho_s))
    return LossResult(psm_val + lam * ortho, psm_val, ortho, residual,
                      {"phi": g_phi, "bias": g_bias, "w_param": g_w})


def ema_update(model: PsmModel) -> None:
    tau = model.config.momentum
    for name in ("phi", "bias", "w_param"):
        t = getattr(model, name + "_t")
        t *= tau
        t += (1.0 - tau) * getattr(model, name)


class _Adam:
    def __init__(self, shapes: dict, lr: dict, b1=0.9, b2=0.999, eps=1e-8):
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}
        self.lr, self.b1, self.b2, self.eps, self.t = lr, b1, b2, eps, 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            params[k] -= self.lr[k] * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _diverged(step: int, value: float, curve: list, model: PsmModel) -> DivergenceError:
    last = next((x for x in reversed(curve) if np.isfinite(x)), float("nan"))
    diag = {
        "step": step,
        "loss": value,
        "last_finite_loss": last,
        "phi_max_abs": float(np.nanmax(np.abs(model.phi))),
        "w_max_abs": float(np.nanmax(np.abs(model.w_param))),
    }
    return DivergenceError(f"loss became non-finite at step {step}", step, diag)


def train_psm(dataset: OfflineDataset, config: PsmConfig, rng_seed: int,
              progress=None) -> PsmModel:
    """Learn ``(Phi, b, w)`` from ``dataset``; deterministic given ``rng_seed``.

    ``progress(step, loss)`` is called every 1000 steps when given.
    """
    config.validate()
    model = init_model(config, dataset.n_states, dataset.n_actions, dataset.rho_s, rng_seed)
    if config.mode == "exact":
        curve = _train_exact(model, dataset, rng_seed, progress)
    else:
        curve = _train_sampled(model, dataset, rng_seed, progress)
    model.loss_curve = np.asarray(curve, dtype=np.float64)
    return model


def _policy_batch(rng, config: PsmConfig) -> np.ndarray:
    return rng.integers(config.pool_size, size=min(config.policies_per_step, config.pool_size))


def _train_exact(model: PsmModel, ds: OfflineDataset, rng_seed: int, progress) -> list:
    cfg = model.config
    rng = np.random.default_rng([rng_seed, 2])
    params = {"phi": model.phi, "bias": model.bias, "w_param": model.w_param}
    lrs = {"phi": cfg.lr, "bias": cfg.lr, "w_param": cfg.lr_w}
    adam = _Adam({k: v.shape for k, v in params.items()}, lrs) if cfg.optimizer == "adam" else None
    curve = []
    for step in range(1, cfg.steps + 1):
        res = psm_loss(model, _policy_batch(rng, cfg), ds)
        if not np.isfinite(res.value):
            raise _diverged(step, res.value, curve, model)
        curve.append(res.value)
        if adam is not None:
            adam.step(params, res.grads)
        else:
            for k, g in res.grads.items():
                params[k] -= lrs[k] * g
        ema_update(model)
        if progress is not None and step % 1000 == 0:
            progress(step, res.value)
    return curve


def sample_minibatch(rng, ds: OfflineDataset, config: PsmConfig) -> Minibatch:
    if ds.records is None:
        raise ValueError("sampled mode needs a record-backed dataset")
    n = ds.size
    pols = _policy_batch(rng, config)
    z = pols[np.arange(config.batch_size) % pols.size]
    rec = ds.records[rng.integers(n, size=config.batch_size)]
    orec = ds.records[rng.integers(n, size=config.ortho_batch)]
    o_sp = ds.records[rng.integers(n, size=config.ortho_batch), 0]
    return Minibatch(rec[:, 0], rec[:, 1], rec[:, 2], z,
                     orec[:, 0] * ds.n_actions + orec[:, 1], o_sp)


def _train_sampled(model: PsmModel, ds: OfflineDataset, rng_seed: int, progress,
                   backend=None) -> list:
    cfg = model.config
    impl = backend or kernels
    rng = np.random.default_rng([rng_seed, 2])
    n_a = model.n_actions
    last_blk = np.zeros(model.n_pairs, dtype=np.int64)
    last_w = np.zeros(model.w_param.shape[0], dtype=np.int64)
    actions = np.ascontiguousarray(model.action_table(), dtype=np.int64)
    rho_s = np.ascontiguousarray(model.rho_s)
    tau = cfg.momentum
    curve = []
    for step in range(1, cfg.steps + 1):
        mb = sample_minibatch(rng, ds, cfg)
        sa = np.ascontiguousarray(mb.s * n_a + mb.a, dtype=np.int64)
        loss, ortho = impl.sampled_step(
            model.phi, model.bias, model.w_param, model.phi_t, model.bias_t, model.w_param_t,
            last_blk, last_w, actions, rho_s, sa, np.ascontiguousarray(mb.s),
            np.ascontiguousarray(mb.s_next), np.ascontiguousarray(mb.z),
            np.ascontiguousarray(mb.o_sa), np.ascontiguousarray(mb.o_sp), step, n_a,
            cfg.gamma, cfg.lr, cfg.lr_w, tau, cfg.ortho_weight)
        value = loss + cfg.ortho_weight * ortho
        if not np.isfinite(value):
            raise _diverged(step, value, curve, model)
        curve.append(value)
        if progress is not None and step % 1000 == 0:
            progress(step, value)
    impl.sync_all(model.phi, model.bias, model.w_param, model.phi_t, model.bias_t,
                  model.w_param_t, last_blk, last_w, cfg.steps, tau)
    return curve


def _policy_operator(model: PsmModel, pi: StochasticPolicy, p_hat: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``(P_pi x)(sa, s+) = sum_s' P(s'|sa) sum_a' pi(a'|s') x(s'a', s+)``."""
    n_s, n_a = model.n_states, model.n_actions
    xs = x.reshape(n_s, n_a, *x.shape[1:])
    mixed = np.einsum("ka,ka...->k...", pi.probs, xs)
    return np.tensordot(p_hat, mixed, axes=(1, 0))


def fit_w_for_policy(model: PsmModel, pi: StochasticPolicy, dataset: OfflineDataset,
                     cond_limit: float = 1e12) -> np.ndarray:
    """Minimize the PSM loss over ``w`` alone, targets tied to ``w`` (TD fixed point).

    Solves ``Phi^T D (I - gamma P_pi)(Phi w + b) = (1 - gamma) Phi^T delta_rho``
    where ``D = diag(rho_sa rho_s)``.
    """
    n_s, n_a, g = model.n_states, model.n_actions, model.gamma
    if pi.probs.shape != (n_s, n_a):
        raise ValueError("policy shape does not match the model")
    if not np.any(model.phi):
        return np.zeros(model.d)
    rho_sa, rho_s, p_hat = dataset.rho_sa, dataset.rho_s, dataset.p_hat
    dw = rho_sa[:, None] * rho_s[None, :]
    phi = model.phi
    lhs_phi = phi - g * _policy_operator(model, pi, p_hat, phi)
    lhs_b = model.bias - g * _policy_operator(model, pi, p_hat, model.bias)
    a_mat = np.einsum("nsi,ns,nsj->ij", phi, dw, lhs_phi)
    own = np.repeat(np.arange(n_s), n_a)
    rhs = (1.0 - g) * np.einsum("n,ni->i", rho_sa, phi[np.arange(n_s * n_a), own])
    rhs -= np.einsum("nsi,ns,ns->i", phi, dw, lhs_b)
    cond = np.linalg.cond(a_mat)
    if not np.isfinite(cond) or cond > cond_limit:
        warnings.warn(f"ill-conditioned normal equations (cond={cond:.3g}); using least squares",
                      RuntimeWarning, stacklevel=2)
        return np.linalg.lstsq(a_mat, rhs, rcond=None)[0]
    return np.linalg.solve(a_mat, rhs)


def project_measure(model: PsmModel, measure: np.ndarray) -> np.ndarray:
    """Least-squares ``w`` with ``(Phi w + b) * rho_s`` closest to ``measure``."""
    phi_m, b_m = model.measure_basis()
    return np.linalg.lstsq(phi_m, np.asarray(measure).reshape(-1) - b_m, rcond=None)[0]

