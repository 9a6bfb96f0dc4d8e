"""Zero-shot evaluation against value-iteration oracles."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .envs import shortest_path_lengths
from .infer import InferenceConfig, build_problem, infer_w_dual, infer_w_exact_lp, least_violation, q_star
from .mdp import TabularMdp, goal_reward
from .model import PsmModel
from .oracle import optimal_action_mask, value_iteration


def policy_error(actions, q_oracle: np.ndarray, atol: float = 1e-9) -> tuple[float, int]:
    """Fraction of states whose action is not oracle-optimal.

    States with more than one optimal action are left out of both counts,
    since the oracle's argmax is arbitrary there. Returns
    ``(error_fraction, states_counted)``.
    """
    mask = optimal_action_mask(q_oracle, atol)
    keep = mask.sum(axis=1) == 1
    n = int(keep.sum())
    if n == 0:
        return 0.0, 0
    acts = np.asarray(actions)
    wrong = ~mask[np.arange(mask.shape[0]), acts]
    return float(wrong[keep].sum()) / n, n


def reach_probability(mdp: TabularMdp, actions, goal: int, horizon: int) -> np.ndarray:
    """Probability, per start state, of visiting ``goal`` within ``horizon`` steps."""
    acts = np.asarray(actions)
    step = mdp.transition[np.arange(mdp.n_states), acts]  # (S, S)
    p = np.zeros(mdp.n_states)
    p[goal] = 1.0
    for _ in range(horizon):
        p = step @ p
        p[goal] = 1.0
    return p


def rollout_success(mdp: TabularMdp, actions, goal: int, horizon: int) -> float:
    """Fraction of start states whose greedy rollout reaches ``goal`` in time."""
    return float(np.mean(reach_probability(mdp, actions, goal, horizon) >= 0.5))


@dataclass
class GoalResult:
    goal: int
    error: float
    counted: int
    success: float
    relaxation: float
    infer_time: float


@dataclass
class EvaluationReport:
    rows: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.error for r in self.rows])

    @property
    def successes(self) -> np.ndarray:
        return np.array([r.success for r in self.rows])

    def summary(self) -> dict:
        e, s = self.errors, self.successes
        return {
            "goals": len(self.rows),
            "error_mean": float(e.mean()) if e.size else float("nan"),
            "error_std": float(e.std()) if e.size else float("nan"),
            "success_rate": float(s.mean()) if s.size else float("nan"),
            "goals_solved": float(np.mean(s == 1.0)) if s.size else float("nan"),
        }

    def to_csv(self) -> str:
        lines = ["goal,error,counted,success,relaxation"]
        lines += [f"{r.goal},{r.error!r},{r.counted},{r.success!r},{r.relaxation!r}"
                  for r in self.rows]
        return "\n".join(lines) + "\n"

    def to_text(self, timings: bool = False) -> str:
        out = [f"{'goal':>6} {'error':>8} {'success':>8} {'relax':>10}"]
        for r in self.rows:
            out.append(f"{r.goal:>6} {r.error:>8.4f} {r.success:>8.4f} {r.relaxation:>10.3g}")
        s = self.summary()
        out.append(f"mean error {s['error_mean']:.4f} +- {s['error_std']:.4f}; "
                   f"success rate {s['success_rate']:.4f}; goals fully solved {s['goals_solved']:.4f}")
        for k, v in (self.timings.items() if timings else ()):
            out.append(f"{k} {v:.2f}s")
        return "\n".join(out) + "\n"


def evaluate_goal(model: PsmModel, mdp: TabularMdp, goal: int, method: str = "lp",
                  horizon: int | None = None, config: InferenceConfig | None = None,
                  relaxation: float | None = None) -> GoalResult:
    r = goal_reward(mdp, goal)
    start = time.perf_counter()
    if method == "lp":
        rep = infer_w_exact_lp(model, r, relaxation=relaxation)
    elif method == "dual":
        rep = infer_w_dual(model, r, config)
    else:
        raise ValueError(f"unknown inference method {method!r}")
    q = q_star(model, rep.w, r)
    elapsed = time.perf_counter() - start
    acts = np.argmax(q, axis=1)
    q_or, _ = value_iteration(mdp, r)
    err, n = policy_error(acts, q_or)
    if horizon is None:
        horizon = 4 * int(shortest_path_lengths(mdp).max())
    return GoalResult(int(goal), err, n, rollout_success(mdp, acts, goal, horizon),
                      rep.relaxation, elapsed)


def evaluate_goals(model: PsmModel, mdp: TabularMdp, goals, method: str = "lp",
                   config: InferenceConfig | None = None) -> EvaluationReport:
    horizon = 4 * int(shortest_path_lengths(mdp).max())
    report = EvaluationReport()
    start = time.perf_counter()
    eps = None
    if method == "lp" and len(goals):
        # the feasibility slack is reward-independent: find it once
        eps = least_violation(build_problem(model, goal_reward(mdp, int(goals[0]))))
    for g in goals:
        report.rows.append(evaluate_goal(model, mdp, int(g), method, horizon, config, eps))
    report.timings["inference"] = time.perf_counter() - start
    return report
