"""Experiment configuration: one flat record, loaded from YAML or JSON."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .acquisition import ARMS
from .bandit import BETA_MODES, STRATEGIES
from .errors import ConfigError
from .environment import LINK_FAMILIES
from .kernels import KERNEL_FAMILIES
from .norm_study import DEFAULT_LENGTHSCALE, DEFAULT_REGULARIZATION

EXPERIMENTS = ("simulate", "norm-study", "toy-dpo")
NORM_STUDY_DIMS = ((0, 1), (1, 1), (1, 3), (3, 1), (3, 3), (10, 10))


@dataclass
class ExperimentConfig:
    experiment: str = "simulate"
    out: str = "results"
    workers: int = 1
    seeds: list = field(default_factory=lambda: list(range(10)))
    record_timing: bool = False

    # reward generator and duels
    context_dim: int = 1
    action_dim: int = 1
    reward_features: int = 128
    reward_lengthscale: float = 0.3
    reward_std: float = 1.0
    link: str = "logistic"
    link_scale: float = 1.0

    # bandit
    kernel: str = "matern-5/2"
    lengthscale: float = 0.3
    kernel_variance: float = 1.0
    regularization: float = 0.1
    noise_scale: float = 0.5
    n0: int = 25
    T: int = 500
    context_grid_points: int | None = None
    action_grid_points: int | None = None
    strategies: list = field(default_factory=lambda: list(STRATEGIES))
    beta_mode: str = "fixed"
    beta_fixed: float = 2.0
    beta_B: float = 1.0
    beta_delta: float = 0.05
    eval_every: int = 25
    snapshot_every: int = 10
    info_gain_probes: int = 256

    # norm study
    norm_dims: list = field(default_factory=lambda: [list(d) for d in NORM_STUDY_DIMS])
    norm_functions: int = 1000
    norm_functions_high_dim: int = 200
    norm_points: int = 1000
    norm_quadrature: int = 1024
    norm_lengthscale: float = DEFAULT_LENGTHSCALE
    norm_regularization: float = DEFAULT_REGULARIZATION

    # toy active DPO
    arms: list = field(default_factory=lambda: list(ARMS))
    rounds: int = 30
    vocab_size: int = 6
    prompt_len: int = 3
    pool_size: int = 64
    eval_prompts: int = 32
    max_len: int = 4
    num_masks: int = 4
    dropout: float = 0.1
    init_scale: float = 0.5
    pool_sample: int = 16
    batch_size: int = 4
    num_candidates: int = 4
    num_comparators: int = 8
    gamma: float = 1.0
    dpo_beta: float = 1.0
    learning_rate: float = 0.5
    temperature: float = 1.0
    oracle_scale: float = 1.0
    oracle_file: str | None = None

    def grid_points(self, dim: int, override: int | None) -> int:
        if override is not None:
            return override
        return 101 if dim <= 1 else 33

    @property
    def context_points(self) -> int:
        return self.grid_points(self.context_dim, self.context_grid_points)

    @property
    def action_points(self) -> int:
        return self.grid_points(self.action_dim, self.action_grid_points)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> "ExperimentConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.experiment in EXPERIMENTS, f"experiment must be one of {EXPERIMENTS}")
        need(isinstance(self.seeds, list) and len(self.seeds) >= 1, "need at least one seed")
        need(all(isinstance(s, int) and s >= 0 for s in self.seeds), "seeds must be non-negative ints")
        need(len(set(self.seeds)) == len(self.seeds), "seeds must be distinct")
        need(self.workers >= 1, "workers must be >= 1")
        need(self.context_dim >= 0 and self.action_dim >= 1, "need context_dim >= 0, action_dim >= 1")
        need(self.link in LINK_FAMILIES, f"link must be one of {LINK_FAMILIES}")
        need(self.kernel in KERNEL_FAMILIES, f"kernel must be one of {KERNEL_FAMILIES}")
        need(self.lengthscale > 0 and self.kernel_variance > 0 and self.reward_lengthscale > 0,
             "lengthscales and variance must be positive")
        need(self.regularization > 0 and self.noise_scale > 0, "regularization and noise_scale must be positive")
        need(self.T >= self.n0 >= 0, "need T >= n0 >= 0")
        need(self.context_points >= 1 and self.action_points >= 2, "grid resolutions too small")
        need(len(self.strategies) >= 1 and all(s in STRATEGIES for s in self.strategies),
             f"strategies must be drawn from {STRATEGIES}")
        need(len(set(self.strategies)) == len(self.strategies), "strategies must be distinct")
        need(self.beta_mode in BETA_MODES, f"beta_mode must be one of {BETA_MODES}")
        need(self.eval_every >= 1 and self.snapshot_every >= 1, "cadences must be >= 1")
        need(self.norm_functions >= 1 and self.norm_functions_high_dim >= 1, "norm_functions must be >= 1")
        need(self.norm_points >= 2 and self.norm_quadrature >= 2, "norm_points and norm_quadrature must be >= 2")
        need(all(isinstance(d, (list, tuple)) and len(d) == 2 and d[0] >= 0 and d[1] >= 1
                 for d in self.norm_dims), "norm_dims entries must be [context_dim >= 0, action_dim >= 1]")
        need(len(self.arms) >= 1 and all(a in ARMS for a in self.arms), f"arms must be drawn from {ARMS}")
        need(2 <= self.vocab_size <= 64, "vocab_size must lie in [2, 64]")
        need(1 <= self.max_len <= 8, "max_len must lie in [1, 8]")
        need(self.prompt_len >= 1 and self.rounds >= 0 and self.eval_prompts >= 1, "bad toy-dpo sizes")
        need(1 <= self.batch_size <= self.pool_sample <= self.pool_size, "need batch_size <= pool_sample <= pool_size")
        need(self.num_masks >= 2 and 0 <= self.dropout < 1, "need num_masks >= 2 and 0 <= dropout < 1")
        need(self.gamma > 0 and self.dpo_beta >= 0 and self.learning_rate >= 0,
             "need gamma > 0, dpo_beta >= 0, learning_rate >= 0")
        return self


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


_NULLABLE = ("context_grid_points", "action_grid_points", "oracle_file")


def _coerce(name: str, value: Any, default: Any) -> Any:
    if value is None:
        if name not in _NULLABLE:
            raise ConfigError(f"{name} may not be null")
        return None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be a boolean")
        return value
    if isinstance(default, int) or name in _NULLABLE[:2]:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{name} must be a list")
        return value
    if not isinstance(value, str):
        raise ConfigError(f"{name} must be a string")
    return value


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build and validate a config; unknown keys are errors."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    unknown = sorted(set(data) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    defaults = ExperimentConfig()
    values = {k: _coerce(k, v, getattr(defaults, k)) for k, v in data.items()}
    return ExperimentConfig(**values).validate()


def load_config(path) -> ExperimentConfig:
    """Read a YAML or JSON config, or the metadata file of a previous campaign."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (ValueError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if data is None:
        data = {}
    if isinstance(data, dict) and "config" in data and "library_version" in data:
        data = data["config"]
    return config_from_dict(data)


def parse_override(name: str, text: str) -> Any:
    """Parse a command-line value for config key ``name``."""
    default = getattr(ExperimentConfig(), name)
    if text.lower() in ("none", "null") and name in _NULLABLE:
        return None
    try:
        if isinstance(default, bool):
            if text.lower() not in ("true", "false", "1", "0"):
                raise ValueError(text)
            return text.lower() in ("true", "1")
        if isinstance(default, int) or name in _NULLABLE[:2]:
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, list):
            value = yaml.safe_load(text)
            if not isinstance(value, list):
                value = [v.strip() for v in text.split(",") if v.strip()]
                value = [yaml.safe_load(v) for v in value]
            return value
    except ValueError as exc:
        raise ConfigError(f"bad value for --{name}: {text!r}") from exc
    return text
