"""Run configuration: one JSON document with a section per subsystem.

Unknown keys are rejected and every value is type-checked, with errors
naming the offending field (``train.bootstrap.n_minibatches: ...``).  Missing
keys take defaults; the defaults describe the full-scale five-target setup
(32x32 grid, 3 agents, 5 targets, horizon 128, the corresponding reward
weights and training sizes).
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, get_type_hints

from .env import GenerationConfig
from .exceptions import InvalidConfigError
from .reward import RewardWeights
from .trainer import PhaseConfig, TrainConfig


@dataclass(frozen=True)
class EvalConfig:
    n_episodes: int = 100
    # held-out scenario seeds are first_seed, first_seed + 1, ...
    first_seed: int = 0
    n_inject: int = 5
    replan_episodes: int = 1000
    replan_seed: int = 10
    timing_repetitions: int = 10


@dataclass(frozen=True)
class ESConfig:
    budget: float = 5e6
    oracle_max_states: int = 2_000_000


@dataclass(frozen=True)
class RunConfig:
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    rewards: RewardWeights = field(default_factory=RewardWeights)
    eval: EvalConfig = field(default_factory=EvalConfig)
    es: ESConfig = field(default_factory=ESConfig)
    output_dir: str = "runs"
    seed: int = 0

    def validate(self) -> "RunConfig":
        self.generation.validate()
        self.train.validate()
        self.rewards.validate()
        if self.eval.n_episodes <= 0 or self.eval.replan_episodes <= 0 or self.eval.timing_repetitions <= 0:
            raise InvalidConfigError("eval: episode and repetition counts must be positive")
        if self.eval.n_inject < 0:
            raise InvalidConfigError("eval.n_inject must be >= 0")
        if self.es.budget <= 0 or self.es.oracle_max_states <= 0:
            raise InvalidConfigError("es: budgets must be positive")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def _coerce(path: str, value: Any, hint) -> Any:
    if dataclasses.is_dataclass(hint):
        if not isinstance(value, dict):
            raise InvalidConfigError(f"{path}: expected an object, got {type(value).__name__}")
        return _build(hint, value, path)
    if hint is bool:
        if not isinstance(value, bool):
            raise InvalidConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise InvalidConfigError(f"{path}: expected a string, got {value!r}")
        return value
    # optional int (PhaseConfig.seed)
    if value is None or (isinstance(value, int) and not isinstance(value, bool)):
        return value
    raise InvalidConfigError(f"{path}: unsupported value {value!r}")


def _build(cls, data: dict, prefix: str = ""):
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{prefix}." if prefix else ""
        raise InvalidConfigError(f"unknown key(s): {', '.join(where + k for k in unknown)}")
    kwargs = {}
    for name, value in data.items():
        path = f"{prefix}.{name}" if prefix else name
        kwargs[name] = _coerce(path, value, hints[name])
    return cls(**kwargs)


def config_from_dict(data: dict) -> RunConfig:
    cfg = _build(RunConfig, data)
    for section, obj in (("generation", cfg.generation), ("train", cfg.train), ("rewards", cfg.rewards)):
        try:
            obj.validate()
        except InvalidConfigError as exc:
            raise InvalidConfigError(f"{section}.{exc}") from None
    return cfg.validate()


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    if not text.strip():
        return RunConfig().validate()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise InvalidConfigError(f"{path}: top level must be an object")
    return config_from_dict(data)


def desk_config(**overrides) -> RunConfig:
    """Small CPU-sized setup: 8x8 grid, 2 agents, 2 targets, 64 environments of 64 steps."""
    cfg = RunConfig(
        generation=GenerationConfig(width=8, height=8, n_agents=2, n_targets=2, n_skills=2, horizon=64),
        train=TrainConfig(
            bootstrap=PhaseConfig(n_envs=64, n_updates=450, n_minibatches=2),
            refinement=PhaseConfig(n_envs=64, n_updates=150, n_minibatches=2),
            n_steps=64,
            lr=1e-3,
            dense_dim=64,
            hidden_dim=64,
            checkpoint_every=100,
        ),
        # on an 8x8 grid the full-scale attraction decay is nearly flat, and a step
        # cost of 0.3 per move outweighs the per-step reward scale (1/(M*T_max))
        rewards=RewardWeights(w_sc=0.005, c_ar=0.3),
    )
    return dataclasses.replace(cfg, **overrides).validate()
