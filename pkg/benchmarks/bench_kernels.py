"""Compare the compiled and pure-numpy kernels on the same workload.

    python benchmarks/bench_kernels.py [--steps N] [--grid W]

Both backends start from identical tables and must end bitwise close.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from psm import _kernels_py, kernels
from psm.dataset import build_dataset
from psm.envs import build_grid, open_grid
from psm.infer import build_problem
from psm.learn import _train_sampled
from psm.mdp import goal_reward
from psm.model import PsmConfig, init_model


def _train(backend, ds, cfg):
    model = init_model(cfg, ds.n_states, ds.n_actions, ds.rho_s, 0)
    start = time.perf_counter()
    _train_sampled(model, ds, 0, None, backend=backend)
    return time.perf_counter() - start, model


def _dual(backend, prob, iters):
    d = prob.rows.shape[1]
    w, lam = np.zeros(d), np.zeros(prob.rows.shape[0])
    start = time.perf_counter()
    out = backend.dual_gda(np.ascontiguousarray(prob.rows), np.ascontiguousarray(prob.offset),
                           np.ascontiguousarray(prob.objective), w, lam, 1e-4, 1e-4, iters, 1e-9)
    return time.perf_counter() - start, w


def main(argv=None) -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--grid", type=int, default=8)
    ap.add_argument("--dual-iters", type=int, default=200)
    args = ap.parse_args(argv)
    available = kernels.backends()
    print(f"backends: {', '.join(available)}")
    if "cython" not in available:
        print("compiled backend not built; only the fallback can be timed")
    mdp = build_grid(open_grid(args.grid), 0.98).mdp
    ds = build_dataset(mdp, None, 100000, 0)
    cfg = PsmConfig(d=64, steps=args.steps, gamma=0.98, init_scale=1.0, lr=0.1)
    runs = {name: _train(mod, ds, cfg) for name, mod in available.items()}
    for name, (sec, _) in runs.items():
        print(f"train  {name:>7}: {sec:8.3f}s  {1e3 * sec / args.steps:7.3f} ms/step")
    model = next(iter(runs.values()))[1]
    prob = build_problem(model, goal_reward(mdp, 0))
    duals = {name: _dual(mod, prob, args.dual_iters) for name, mod in available.items()}
    for name, (sec, _) in duals.items():
        print(f"dual   {name:>7}: {sec:8.3f}s  {1e3 * sec / args.dual_iters:7.3f} ms/iter")
    if len(runs) == 2:
        (_, a), (_, b) = runs.values()
        gap = max(float(np.max(np.abs(a.phi - b.phi))), float(np.max(np.abs(a.w_param - b.w_param))))
        (ta, _), (tb, _) = runs.values()
        (da, wa), (db, wb) = duals.values()
        print(f"max table difference {gap:.3g}; dual w difference {float(np.max(np.abs(wa - wb))):.3g}")
        print(f"speedup train {ta / tb:.1f}x, dual {da / db:.1f}x")


if __name__ == "__main__":
    main()
