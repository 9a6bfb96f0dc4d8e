"""Zero-shot inference: pick ``w`` maximizing return inside the nonnegative affine set.

Both solvers work on the same linear program in ``w``:

    maximize  c . w + const   subject to   G w + h >= 0

For an exact visitation basis ``G = Phi`` and ``h = b`` with ``c = Phi^T r``.
For a learned model the rows are the density tables ``m(s, a, s+)`` and
``c`` contracts them with ``mu(s,a) rho(s+) r(s+)``.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog, minimize

from . import kernels
from .flow import AffineBasis, UnboundedRegionError
from .mdp import RewardFunction, StochasticPolicy, TabularMdp
from .model import PsmModel
from .oracle import Visitation, policy_evaluation, policy_from_visitation


class InfeasibleError(ValueError):
    pass


@dataclass(frozen=True)
class InferenceConfig:
    w_step: float = 1e-4
    lambda_step: float = 1e-4
    max_iter: int = 100_000
    tol: float = 1e-6
    check_every: int = 5000

    def validate(self) -> "InferenceConfig":
        if self.w_step <= 0 or self.lambda_step <= 0:
            raise ValueError("dual step sizes must be positive")
        if self.max_iter < 1 or self.check_every < 1:
            raise ValueError("iteration budgets must be positive")
        if self.tol < 0:
            raise ValueError("tol must be nonnegative")
        return self


@dataclass(frozen=True, eq=False)
class InferenceProblem:
    rows: np.ndarray  # G, (n, d)
    offset: np.ndarray  # h, (n,)
    objective: np.ndarray  # c, (d,)
    constant: float = 0.0

    def value(self, w) -> float:
        return float(self.objective @ w) + self.constant

    def violation(self, w) -> float:
        return float(np.maximum(-(self.rows @ w + self.offset), 0.0).sum())

    def min_slack(self, w) -> float:
        return float((self.rows @ w + self.offset).min())


@dataclass(frozen=True)
class InferenceReport:
    method: str
    w: np.ndarray
    objective: float
    violation: float
    min_slack: float
    iterations: int
    wall_time: float
    converged: bool = True
    gap_proxy: float = 0.0
    relaxation: float = 0.0

    def to_text(self) -> str:
        return "".join([
            f"method = {self.method}\n",
            f"objective = {self.objective!r}\n",
            f"violation = {self.violation!r}\n",
            f"min_slack = {self.min_slack!r}\n",
            f"iterations = {self.iterations}\n",
            f"wall_time = {self.wall_time:.6f}\n",
            f"converged = {str(self.converged).lower()}\n",
            f"gap_proxy = {self.gap_proxy!r}\n",
            f"relaxation = {self.relaxation!r}\n",
            "w = " + " ".join(repr(float(x)) for x in self.w) + "\n",
        ])


def _state_reward(model: PsmModel, reward: RewardFunction) -> np.ndarray:
    vals = reward.values
    if vals.shape != (model.n_states, model.n_actions):
        raise ValueError("reward shape does not match the model")
    if not np.all(vals == vals[:, :1]):
        raise ValueError("learned models are state-only; the reward may not depend on the action")
    return vals[:, 0]


def build_problem(source, reward: RewardFunction, mu=None) -> InferenceProblem:
    """LP data for an exact visitation basis or a learned model.

    For a basis the start distribution is already folded into its bias, so
    ``mu`` must be omitted. For a model ``mu`` weights the source pairs
    (uniform over ``(s, a)`` by default).
    """
    if isinstance(source, AffineBasis):
        if mu is not None:
            raise ValueError("a visitation basis already encodes its start distribution")
        r = reward.flat
        if r.size != source.size:
            raise ValueError("reward size does not match the basis")
        return InferenceProblem(source.basis, source.bias, source.basis.T @ r, float(source.bias @ r))
    if isinstance(source, PsmModel):
        r_s = _state_reward(source, reward)
        n = source.n_pairs
        mu_sa = np.full(n, 1.0 / n) if mu is None else np.asarray(mu, dtype=np.float64).reshape(n)
        weight = mu_sa[:, None] * (source.rho_s * r_s)[None, :]
        c = np.einsum("ns,nsd->d", weight, source.phi)
        const = float(np.sum(weight * source.bias))
        return InferenceProblem(source.phi.reshape(-1, source.d), source.bias.reshape(-1), c, const)
    raise TypeError(f"unsupported inference source {type(source).__name__}")


def infer_w_exact_lp(source, reward: RewardFunction, mu=None,
                     relax: bool | None = None, relaxation: float | None = None) -> InferenceReport:
    """Solve the program with HiGHS' interior-point method (vertex via crossover).

    A zero objective makes every feasible ``w`` optimal; the minimum-norm
    feasible ``w`` is returned in that case. Exact bases always contain a
    nonnegative member; a learned model may not, so by default model
    problems that turn out infeasible are re-solved with every row relaxed by
    the smallest uniform slack ``eps`` that admits a solution (reported as
    ``relaxation``). That slack depends only on the model, so callers solving
    many rewards can pass a precomputed ``relaxation`` and skip the search.
    """
    prob = source if isinstance(source, InferenceProblem) else build_problem(source, reward, mu)
    if relax is None:
        relax = isinstance(source, PsmModel)
    start = time.perf_counter()
    eps = 0.0
    if relaxation is not None:
        eps = float(relaxation)
        w, iters = _solve_lp(_shifted(prob, eps) if eps > 0 else prob)
    else:
        try:
            w, iters = _solve_lp(prob)
        except InfeasibleError:
            if not relax:
                raise
            eps = least_violation(prob)
            w, iters = _solve_lp(_shifted(prob, eps))
    return InferenceReport("lp", w, prob.value(w), prob.violation(w), prob.min_slack(w), iters,
                           time.perf_counter() - start, relaxation=eps)


def _shifted(prob: InferenceProblem, eps: float) -> InferenceProblem:
    # a hair above the least slack so the shifted region has an interior
    return InferenceProblem(prob.rows, prob.offset + eps * (1.0 + 1e-9) + 1e-12,
                            prob.objective, prob.constant)


def least_violation(prob: InferenceProblem) -> float:
    """``min_w max_i -(G w + h)_i``: the smallest uniform slack making the rows feasible."""
    n, d = prob.rows.shape
    cost = np.zeros(d + 1)
    cost[-1] = 1.0
    a_ub = np.hstack([-prob.rows, -np.ones((n, 1))])
    res = linprog(cost, A_ub=a_ub, b_ub=prob.offset, bounds=[(None, None)] * (d + 1),
                  method="highs")
    if res.status != 0:
        raise RuntimeError(f"relaxation LP failed: {res.message}")
    return max(float(res.x[-1]), 0.0)


def _solve_lp(prob: InferenceProblem) -> tuple[np.ndarray, int]:
    d = prob.objective.size
    if not np.any(prob.objective):
        return _min_norm_feasible(prob), 0
    res = linprog(-prob.objective, A_ub=-prob.rows, b_ub=prob.offset,
                  bounds=[(None, None)] * d, method="highs-ipm")
    if res.status == 2:
        raise InfeasibleError("affine set has no nonnegative member")
    if res.status == 3:
        raise UnboundedRegionError("objective is unbounded over the feasible region")
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    return res.x, int(getattr(res, "nit", 0))


def _min_norm_feasible(prob: InferenceProblem) -> np.ndarray:
    d = prob.objective.size
    if np.all(prob.offset >= 0):
        return np.zeros(d)
    feas = linprog(np.zeros(d), A_ub=-prob.rows, b_ub=prob.offset,
                   bounds=[(None, None)] * d, method="highs")
    if feas.status == 2:
        raise InfeasibleError("affine set has no nonnegative member")
    res = minimize(lambda w: 0.5 * w @ w, feas.x, jac=lambda w: w, method="SLSQP",
                   constraints=[{"type": "ineq", "fun": lambda w: prob.rows @ w + prob.offset,
                                 "jac": lambda w: prob.rows}],
                   options={"ftol": 1e-14, "maxiter": 500})
    w = res.x if res.success and prob.min_slack(res.x) >= -1e-9 else feas.x
    return w


def restore_feasibility(prob: InferenceProblem, w: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    """Smallest step from ``w`` toward a feasible ``anchor`` that satisfies every row."""
    v = prob.rows @ w + prob.offset
    if v.min() >= 0:
        return w
    va = prob.rows @ anchor + prob.offset
    gain = va - v
    bad = (v < 0) & (gain > 0)  # rows the anchor cannot lift stay as they are
    if not bad.any():
        return w
    theta = min(float(np.max(-v[bad] / gain[bad])), 1.0)
    return (1.0 - theta) * w + theta * anchor


def infer_w_dual(source, reward: RewardFunction | None = None, config: InferenceConfig | None = None,
                 mu=None, backend=None, patience: int = 3) -> InferenceReport:
    """Alternating gradient steps on the hinge Lagrangian, ``lambda`` kept nonnegative.

    Descent on ``w`` for ``-c.w - sum lambda min(Gw + h, 0)``, ascent on
    ``lambda``. The iterates settle onto the optimal vertex from slightly
    outside, so every ``config.check_every`` iterations the current iterate is
    pulled onto the feasible set along the segment to the best feasible point
    seen so far (ratio test). Stops once the multipliers have settled and
    that candidate has not improved by more than ``config.tol`` for
    ``patience`` checks.
    """
    cfg = (config or InferenceConfig()).validate()
    prob = source if isinstance(source, InferenceProblem) else build_problem(source, reward, mu)
    impl = backend or kernels
    rows = np.ascontiguousarray(prob.rows, dtype=np.float64)
    offset = np.ascontiguousarray(prob.offset, dtype=np.float64)
    c = np.ascontiguousarray(prob.objective, dtype=np.float64)
    w = np.zeros(c.size)
    lam = np.zeros(offset.size)
    start = time.perf_counter()
    best_w, best_obj = None, -np.inf
    done, stale, converged = 0, 0, False
    while done < cfg.max_iter:
        chunk = min(cfg.check_every, cfg.max_iter - done)
        lam_prev = lam.copy()
        cw, _, _, ran = impl.dual_gda(rows, offset, c, w, lam, cfg.w_step, cfg.lambda_step,
                                      chunk, cfg.tol)
        done += ran
        cands = [] if cw is None else [cw]
        if best_w is not None or cw is not None:
            cands.append(restore_feasibility(prob, w.copy(), cw if cw is not None else best_w))
        prev = best_obj
        for cand in cands:
            obj = float(c @ cand)
            if prob.min_slack(cand) >= -cfg.tol and obj > best_obj:
                best_w, best_obj = cand.copy(), obj
        settled = np.linalg.norm(lam - lam_prev) <= 1e-3 * np.linalg.norm(lam) + cfg.tol
        flat = best_obj <= prev + cfg.tol * max(1.0, abs(best_obj))
        stale = stale + 1 if (settled and flat) else 0
        if best_w is not None and stale >= patience:
            converged = True
            break
    if best_w is None:
        warnings.warn("dual ascent found no feasible iterate within budget", RuntimeWarning,
                      stacklevel=2)
        best_w = w.copy()
    elif not converged:
        warnings.warn("dual ascent budget exhausted before the objective settled", RuntimeWarning,
                      stacklevel=2)
    v = rows @ w + offset
    active = v <= 0
    gap = float(np.linalg.norm(c - lam[active] @ rows[active]))
    return InferenceReport("dual", best_w, prob.value(best_w), prob.violation(best_w),
                           prob.min_slack(best_w), done, time.perf_counter() - start, converged, gap)


def q_star(source, w, reward: RewardFunction, mdp: TabularMdp | None = None) -> np.ndarray:
    """Action values on the conventional (undiscounted-sum) scale.

    For a learned model, ``Q(s,a) = sum_s+ m(s,a,s+) rho(s+) r(s+) / (1 - gamma)``.
    For an exact visitation basis the visitation ``Phi w + b`` defines a
    policy, whose values are evaluated on ``mdp``.
    """
    if isinstance(source, PsmModel):
        r_s = _state_reward(source, reward)
        return (source.measure(w) @ r_s).reshape(source.n_states, source.n_actions) / (1.0 - source.gamma)
    if isinstance(source, AffineBasis):
        if mdp is None:
            raise ValueError("evaluating a visitation basis needs the MDP")
        pi = policy_from_visitation(Visitation(source.reconstruct(w), mdp.n_actions))
        return policy_evaluation(mdp, pi, reward)
    raise TypeError(f"unsupported source {type(source).__name__}")


def greedy_policy(q: np.ndarray) -> StochasticPolicy:
    """Deterministic argmax policy; ties go to the lowest action index."""
    q = np.asarray(q)
    return StochasticPolicy.deterministic(np.argmax(q, axis=1), q.shape[1])
