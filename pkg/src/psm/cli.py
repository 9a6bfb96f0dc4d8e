"""``psm collect|train|infer|eval --config <path> [--seed N] [--out DIR]``.

Exit codes: 0 success, 2 invalid input, 3 training divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from . import experiment as ex
from .envs import LayoutError
from .infer import InfeasibleError
from .learn import DivergenceError

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="psm", description="Proto successor measures on tabular MDPs.")
    p.add_argument("command", choices=("collect", "train", "infer", "eval"))
    p.add_argument("--config", required=True, help="UTF-8 file of 'key = value' lines")
    p.add_argument("--seed", type=int, help="override rng_seed")
    p.add_argument("--out", help="override the output directory")
    return p


def _collect(cfg: ex.ExperimentConfig) -> None:
    ds, path = ex.collect(cfg)
    print(f"wrote {path}: {ds.size} transitions, coverage {ds.coverage():.4f}")


def _train(cfg: ex.ExperimentConfig) -> None:
    def progress(step, loss):
        print(f"step {step} loss {loss:.6g}", flush=True)

    model = ex.train(cfg, progress)
    print(f"wrote {cfg.model_file}: final loss {model.loss_curve[-1]:.6g}" if model.loss_curve.size
          else f"wrote {cfg.model_file}")


def _infer(cfg: ex.ExperimentConfig) -> None:
    q, rep = ex.infer(cfg)
    print(rep.to_text(), end="")
    print(f"wrote q.csv, policy.csv, heatmap.pgm to {cfg.out_dir}")


def _eval(cfg: ex.ExperimentConfig) -> None:
    report = ex.evaluate(cfg)
    print(report.to_text(timings=True), end="")


_COMMANDS = {"collect": _collect, "train": _train, "infer": _infer, "eval": _eval}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    overrides = {}
    if args.seed is not None:
        overrides["rng_seed"] = str(args.seed)
    try:
        cfg = ex.load_config(args.config, overrides)
        if args.out is not None:
            cfg = dataclasses.replace(cfg, out=args.out)
        _COMMANDS[args.command](cfg)
    except DivergenceError as exc:
        print(f"psm: diverged: {exc}", file=sys.stderr)
        for k, v in exc.diagnostics.items():
            print(f"  {k}: {v}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ex.ConfigError, LayoutError, InfeasibleError, ValueError, OSError) as exc:
        print(f"psm: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
