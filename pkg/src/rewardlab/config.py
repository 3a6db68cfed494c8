"""Experiment configuration: schema, YAML loading, and hashing.

Configs are nested frozen dataclasses built from plain dicts with full type
checking; every violation names the exact field path. The config hash covers
every field that can affect results (everything except the output directory),
so equal hashes imply byte-identical outputs.
"""

from __future__ import annotations

import hashlib
import json
import types
import typing
from dataclasses import MISSING, dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .env import BehaviourPolicyKind, GridSpec
from .errors import ConfigError
from .learner import TrainSpec
from .seeding import derive_seed

STRATEGY_LABEL_KINDS = (
    "bc",
    "gt",
    "sqil",
    "oril",
    "tgr",
    "tgr_i",
    "sup_demo",
    "sup_and_flat",
)


@dataclass(frozen=True)
class PolicyMixEntry:
    kind: str
    weight: float
    epsilon: float = 0.0
    switch_t: int = 6

    def __post_init__(self) -> None:
        if self.weight <= 0:
            raise ConfigError(f"mix weight must be positive, got {self.weight}")

    def to_kind(self) -> BehaviourPolicyKind:
        return BehaviourPolicyKind(self.kind, epsilon=self.epsilon, switch_t=self.switch_t)


@dataclass(frozen=True)
class DatasetConfig:
    n_episodes: int = 2000
    seed: int = 101
    policy_mix: tuple[PolicyMixEntry, ...] = (
        PolicyMixEntry(kind="expert", weight=0.4, epsilon=0.2),
        PolicyMixEntry(kind="wandering", weight=0.3),
        PolicyMixEntry(kind="random", weight=0.3),
    )

    def __post_init__(self) -> None:
        if self.n_episodes < 1:
            raise ConfigError(f"n_episodes must be >= 1, got {self.n_episodes}")
        if not self.policy_mix:
            raise ConfigError("policy_mix must not be empty")


@dataclass(frozen=True)
class PartitionConfig:
    p_demo: float = 1.0 / 16.0
    reward_pool_fraction: float = 0.5
    validation_count: int = 40
    min_demos: int = 0
    seed: int = 11

    def __post_init__(self) -> None:
        if not 0.0 < self.p_demo <= 1.0:
            raise ConfigError(f"p_demo must be in (0,1], got {self.p_demo}")
        if not 0.0 < self.reward_pool_fraction <= 1.0:
            raise ConfigError(
                f"reward_pool_fraction must be in (0,1], got {self.reward_pool_fraction}"
            )
        if self.validation_count < 0:
            raise ConfigError("validation_count must be >= 0")
        if self.min_demos < 0:
            raise ConfigError("min_demos must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    steps: int = 2000
    lr: float = 1e-3
    seed: int = 0

    def to_spec(self, seed: int | None = None) -> TrainSpec:
        return TrainSpec(
            batch_size=self.batch_size,
            steps=self.steps,
            lr=self.lr,
            seed=self.seed if seed is None else seed,
        )


@dataclass(frozen=True)
class StrategyEntry:
    """One strategy column of a study: its label, kind and hyperparameters.

    kinds bc and gt are agent-level baselines: bc clones the demos directly,
    gt trains the agent on ground-truth rewards; neither trains a reward
    model.
    """

    label: str
    kind: str
    t0_fraction: float = 0.5
    refinement_iters: int = 3
    oril_reg: str = "none"
    class_prior: float | None = None
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self) -> None:
        if self.kind not in STRATEGY_LABEL_KINDS:
            raise ConfigError(
                f"unknown strategy kind {self.kind!r}, expected one of {STRATEGY_LABEL_KINDS}"
            )
        if not self.label:
            raise ConfigError("strategy label must not be empty")
        if self.t0_fraction < 0:
            raise ConfigError("t0_fraction must be >= 0")
        if self.refinement_iters < 0:
            raise ConfigError("refinement_iters must be >= 0")
        if self.oril_reg not in ("none", "pu"):
            raise ConfigError(f"unknown oril_reg {self.oril_reg!r}")
        if self.class_prior is not None and not 0.0 < self.class_prior < 1.0:
            raise ConfigError("class_prior must lie in (0, 1)")


@dataclass(frozen=True)
class AgentSection:
    kind: str = "crr"
    discount: float = 0.99
    target_sync: int = 200
    weight_rule: str = "binary"
    beta: float = 1.0
    weight_clip: float = 20.0
    train: TrainConfig = field(default_factory=lambda: TrainConfig(steps=3000))

    def __post_init__(self) -> None:
        if self.kind not in ("bc", "crr"):
            raise ConfigError(f"unknown agent kind {self.kind!r}")
        if not 0.0 < self.discount <= 1.0:
            raise ConfigError("discount must lie in (0, 1]")
        if self.target_sync < 1:
            raise ConfigError("target_sync must be >= 1")
        if self.weight_rule not in ("binary", "exponential"):
            raise ConfigError(f"unknown weight_rule {self.weight_rule!r}")
        if self.beta <= 0:
            raise ConfigError("beta must be positive")
        if self.weight_clip <= 0:
            raise ConfigError("weight_clip must be positive")


@dataclass(frozen=True)
class EvalSection:
    every: int = 500
    episodes: int = 100
    mode: str = "greedy"
    seed: int = 777

    def __post_init__(self) -> None:
        if self.every < 1:
            raise ConfigError("eval.every must be >= 1")
        if self.episodes < 1:
            raise ConfigError("eval.episodes must be >= 1")
        if self.mode not in ("greedy", "sampled"):
            raise ConfigError(f"unknown eval mode {self.mode!r}")


@dataclass(frozen=True)
class SweepSection:
    strategy_label: str = "tgr"
    t0_fractions: tuple[float, ...] = (0.25, 0.4, 0.5, 0.6)
    lrs: tuple[float, ...] = (1e-3, 3e-4)

    def __post_init__(self) -> None:
        if not self.t0_fractions or not self.lrs:
            raise ConfigError("sweep grids must not be empty")


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str = "custom"
    out_dir: str = "runs/custom"
    env: GridSpec = field(default_factory=GridSpec)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    strategies: tuple[StrategyEntry, ...] = (
        StrategyEntry(label="gt", kind="gt"),
        StrategyEntry(label="tgr", kind="tgr"),
    )
    agent: AgentSection = field(default_factory=AgentSection)
    eval: EvalSection = field(default_factory=EvalSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    seeds: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        labels = [s.label for s in self.strategies]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"duplicate strategy labels: {labels}")
        if not self.strategies:
            raise ConfigError("strategies must not be empty")

    def strategy(self, label: str) -> StrategyEntry:
        for entry in self.strategies:
            if entry.label == label:
                return entry
        raise ConfigError(
            f"no strategy labeled {label!r}; have {[s.label for s in self.strategies]}"
        )


def _coerce(tp, value, path: str):
    origin = typing.get_origin(tp)
    if origin is typing.Union or origin is types.UnionType:
        args = typing.get_args(tp)
        if value is None:
            if type(None) in args:
                return None
            raise ConfigError(f"{path}: may not be null")
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, path)
    if origin in (tuple, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        item_tp = typing.get_args(tp)[0]
        return tuple(_coerce(item_tp, v, f"{path}[{i}]") for i, v in enumerate(value))
    if is_dataclass(tp):
        return build_section(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported config field type {tp}")


def build_section(cls, data, path: str = "config"):
    """Build one dataclass section from a dict, naming bad fields by path."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{path}.{key}: unknown field")
    kwargs = {}
    for f in fields(cls):
        if f.name in data:
            kwargs[f.name] = _coerce(hints[f.name], data[f.name], f"{path}.{f.name}")
        elif f.default is MISSING and f.default_factory is MISSING:
            raise ConfigError(f"{path}.{f.name}: required field missing")
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        # Re-raise with the section path when the message lacks one.
        raise ConfigError(f"{path}: {exc}") from None


def config_from_dict(data: dict) -> ExperimentConfig:
    return build_section(ExperimentConfig, data, "config")


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(data)


def config_to_dict(obj):
    """Dataclass tree -> plain JSON-serializable dict."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: config_to_dict(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, tuple):
        return [config_to_dict(v) for v in obj]
    return obj


def config_hash(config: ExperimentConfig) -> str:
    """Hash of every result-affecting field (everything but out_dir)."""
    doc = config_to_dict(config)
    doc.pop("out_dir", None)
    blob = json.dumps(doc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def run_seed_for(config_seed: int, *scope) -> int:
    """Per-(stage, strategy, seed) derived stream, stable across runs."""
    return derive_seed(config_seed, *scope)
