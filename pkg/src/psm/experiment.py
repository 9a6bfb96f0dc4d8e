"""Experiment configuration and the four pipeline stages behind the CLI."""

from __future__ import annotations

import dataclasses
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import OfflineDataset, build_dataset, dumps_dataset, load_dataset
from .envs import Grid, build_grid, four_room_spec, load_layout, open_grid, sample_goals
from .evaluate import EvaluationReport, evaluate_goals
from .infer import InferenceConfig, greedy_policy, infer_w_dual, infer_w_exact_lp, q_star
from .learn import train_psm
from .mdp import RewardFunction, goal_reward
from .model import PsmConfig, PsmModel, load_model, dumps_model


class ConfigError(ValueError):
    """Malformed or out-of-range experiment configuration."""


_MODEL_KEYS = {f.name for f in dataclasses.fields(PsmConfig)}


@dataclass(frozen=True)
class ExperimentConfig:
    env: str = "gridworld"  # gridworld | four_room | layout
    layout: str = ""
    width: int = 8
    size: int = 11
    slip: float = 0.0
    dataset_size: int = 100000
    dataset: str = ""
    model_path: str = ""
    inference: str = "lp"  # lp | dual
    w_step: float = 1e-4
    lambda_step: float = 1e-4
    max_iter: int = 100000
    goal_count: int = 10
    goal: int = -1
    reward_file: str = ""
    rng_seed: int = 0
    out: str = "out"
    model: PsmConfig = PsmConfig()

    def validate(self) -> "ExperimentConfig":
        if self.env not in ("gridworld", "four_room", "layout"):
            raise ConfigError(f"unknown env {self.env!r}")
        if self.env == "layout" and not Path(self.layout).is_file():
            raise ConfigError(f"layout file {self.layout!r} does not exist")
        if self.width < 1 or self.size < 5:
            raise ConfigError("grid sizes out of range")
        if not 0.0 <= self.slip <= 1.0:
            raise ConfigError("slip must lie in [0, 1]")
        if self.dataset_size < 1:
            raise ConfigError("dataset_size must be positive")
        if self.inference not in ("lp", "dual"):
            raise ConfigError(f"unknown inference method {self.inference!r}")
        if self.w_step <= 0 or self.lambda_step <= 0 or self.max_iter < 1:
            raise ConfigError("inference step sizes and budget must be positive")
        if self.goal_count < 1:
            raise ConfigError("goal_count must be positive")
        if self.reward_file and not Path(self.reward_file).is_file():
            raise ConfigError(f"reward file {self.reward_file!r} does not exist")
        if self.rng_seed < 0:
            raise ConfigError("rng_seed must be nonnegative")
        try:
            self.model.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @property
    def dataset_path(self) -> Path:
        return Path(self.dataset) if self.dataset else self.out_dir / "dataset.txt"

    @property
    def model_file(self) -> Path:
        return Path(self.model_path) if self.model_path else self.out_dir / "model.psmm"

    def inference_config(self) -> InferenceConfig:
        return InferenceConfig(w_step=self.w_step, lambda_step=self.lambda_step, max_iter=self.max_iter)


def parse_config_text(text: str) -> dict:
    values = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, val = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {n}: empty key")
        values[key] = val
    return values


def config_from_mapping(values: dict, base: Path | None = None) -> ExperimentConfig:
    """Build a config; relative paths resolve against ``base``."""
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    top, model = {}, {}
    for key, val in values.items():
        if key in _MODEL_KEYS:
            model[key] = val
        elif key in fields and key != "model":
            top[key] = val
        else:
            raise ConfigError(f"unknown config key {key!r}")
    kw = {}
    try:
        for key, val in top.items():
            kind = type(fields[key].default)
            kw[key] = val.strip("'\"") if kind is str else kind(val)
        if "gamma" not in model:
            model["gamma"] = str(PsmConfig.gamma)
        kw["model"] = PsmConfig.from_mapping(model)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if base is not None:
        for key in ("layout", "dataset", "model_path", "reward_file", "out"):
            if kw.get(key) and not Path(kw[key]).is_absolute():
                kw[key] = str(base / kw[key])
    return ExperimentConfig(**kw).validate()


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} does not exist")
    values = parse_config_text(path.read_text(encoding="utf-8"))
    values.update(overrides or {})
    return config_from_mapping(values, path.parent)


def atomic_write(path, data) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def build_env(cfg: ExperimentConfig) -> Grid:
    gamma = cfg.model.gamma
    if cfg.env == "gridworld":
        spec = open_grid(cfg.width, slip=cfg.slip)
    elif cfg.env == "four_room":
        spec = four_room_spec(cfg.size, cfg.slip)
    else:
        spec = load_layout(cfg.layout, cfg.slip)
    return build_grid(spec, gamma)


def collect(cfg: ExperimentConfig) -> tuple[OfflineDataset, Path]:
    grid = build_env(cfg)
    ds = build_dataset(grid.mdp, None, cfg.dataset_size, cfg.rng_seed)
    atomic_write(cfg.dataset_path, dumps_dataset(ds))
    return ds, cfg.dataset_path


def _load_dataset(cfg: ExperimentConfig, grid: Grid) -> OfflineDataset:
    if not cfg.dataset_path.is_file():
        raise ConfigError(f"dataset {str(cfg.dataset_path)!r} does not exist; run collect first")
    ds = load_dataset(cfg.dataset_path)
    if (ds.n_states, ds.n_actions) != (grid.mdp.n_states, grid.mdp.n_actions):
        raise ConfigError("dataset does not match the configured environment")
    return ds


def loss_csv(model: PsmModel) -> str:
    lines = ["step,loss"] + [f"{i + 1},{v!r}" for i, v in enumerate(model.loss_curve)]
    return "\n".join(lines) + "\n"


def train(cfg: ExperimentConfig, progress=None) -> PsmModel:
    grid = build_env(cfg)
    ds = _load_dataset(cfg, grid)
    model = train_psm(ds, cfg.model, cfg.rng_seed, progress)
    atomic_write(cfg.model_file, dumps_model(model))
    atomic_write(cfg.out_dir / "loss.csv", loss_csv(model))
    return model


def _load_model(cfg: ExperimentConfig, grid: Grid) -> PsmModel:
    if not cfg.model_file.is_file():
        raise ConfigError(f"model {str(cfg.model_file)!r} does not exist; run train first")
    try:
        model = load_model(cfg.model_file)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"unreadable model file: {exc}") from exc
    if (model.n_states, model.n_actions) != (grid.mdp.n_states, grid.mdp.n_actions):
        raise ConfigError("model does not match the configured environment")
    return model


def read_reward_file(path, n_states: int, n_actions: int) -> RewardFunction:
    """One state reward per line (state order), or ``state value`` pairs."""
    vals = np.zeros(n_states)
    lines = [ln.split("#", 1)[0].split() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    lines = [p for p in lines if p]
    try:
        if lines and all(len(p) == 2 for p in lines):
            for s, v in lines:
                idx = int(s)
                if not 0 <= idx < n_states:
                    raise ConfigError(f"reward state {idx} out of range")
                vals[idx] = float(v)
        elif len(lines) == n_states and all(len(p) == 1 for p in lines):
            vals = np.array([float(p[0]) for p in lines])
        else:
            raise ConfigError(f"reward file needs {n_states} values or 'state value' pairs")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed reward file: {exc}") from exc
    if not np.all(np.isfinite(vals)):
        raise ConfigError("reward values must be finite")
    return RewardFunction(np.repeat(vals[:, None], n_actions, axis=1))


def heatmap_pgm(grid: Grid, values) -> bytes:
    """Binary graymap of per-cell values scaled to 0..255; walls are black."""
    img = grid.to_image(values)
    finite = img[np.isfinite(img)]
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 0.0)
    scale = (img - lo) / (hi - lo) if hi > lo else np.where(np.isfinite(img), 0.5, 0.0)
    pix = np.where(np.isfinite(img), np.rint(32 + 223 * scale), 0).astype(np.uint8)
    h, w = pix.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes()


def table_csv(header: str, rows) -> str:
    return header + "\n" + "\n".join(",".join(repr(float(x)) if isinstance(x, (float, np.floating))
                                              else str(x) for x in r) for r in rows) + "\n"


def infer(cfg: ExperimentConfig):
    grid = build_env(cfg)
    model = _load_model(cfg, grid)
    n_s, n_a = model.n_states, model.n_actions
    if cfg.reward_file:
        reward = read_reward_file(cfg.reward_file, n_s, n_a)
    elif 0 <= cfg.goal < n_s:
        reward = goal_reward(grid.mdp, cfg.goal)
    else:
        raise ConfigError("infer needs a reward_file or a goal state in range")
    if cfg.inference == "lp":
        rep = infer_w_exact_lp(model, reward)
    else:
        rep = infer_w_dual(model, reward, cfg.inference_config())
    q = q_star(model, rep.w, reward)
    pi = greedy_policy(q)
    acts = pi.probs.argmax(axis=1)
    out = cfg.out_dir
    atomic_write(out / "q.csv", table_csv("state," + ",".join(f"a{a}" for a in range(n_a)),
                                          [[s, *q[s]] for s in range(n_s)]))
    atomic_write(out / "policy.csv", table_csv("state,row,col,action",
                                               [[s, *grid.cell_of(s), int(acts[s])] for s in range(n_s)]))
    atomic_write(out / "heatmap.pgm", heatmap_pgm(grid, q.max(axis=1)))
    return q, rep


def evaluate(cfg: ExperimentConfig) -> EvaluationReport:
    grid = build_env(cfg)
    model = _load_model(cfg, grid)
    goals = sample_goals(grid.mdp, cfg.goal_count, cfg.rng_seed)
    report = evaluate_goals(model, grid.mdp, goals, cfg.inference, cfg.inference_config())
    atomic_write(cfg.out_dir / "report.txt", report.to_text())
    atomic_write(cfg.out_dir / "report.csv", report.to_csv())
    return report
