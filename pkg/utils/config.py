"""Regime and experiment configuration: dataclasses, flat YAML files and the config hash."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, fields, replace
from enum import Enum
from pathlib import Path

import yaml

from data import defaults
from data.algorithms import BASE_FOR_TARGET, AlgorithmId, parse_algorithm
from utils.errors import ConfigError, InvalidArgument
from utils.graphgen import parse_family

logger = logging.getLogger(__name__)


class Regime(str, Enum):
    TF = "TF"
    NA = "NA"
    TRANSFER_FREEZE = "TRANSFER_FREEZE"
    TRANSFER_FINETUNE = "TRANSFER_FINETUNE"
    TRANSFER_2PROC = "TRANSFER_2PROC"
    MULTITASK = "MULTITASK"

    @property
    def needs_base(self):
        return self not in (Regime.TF, Regime.NA)

    @property
    def is_transfer(self):
        return self.value.startswith("TRANSFER_")

    @property
    def target_uses_true_steps(self):
        """Targets trained without intermediate supervision are evaluated with the true T."""
        return self is not Regime.TF


class TrajectoryAggregate(str, Enum):
    BEST = "BEST"
    MEAN = "MEAN"


def parse_regime(name) -> Regime:
    key = str(name).strip().upper().replace("-", "_")
    if key in Regime.__members__:
        return Regime[key]
    raise InvalidArgument(
        f"unknown regime {name!r}; expected tf, na, multitask, transfer-freeze, transfer-finetune or transfer-2proc"
    )


def _parse_aggregate(name) -> TrajectoryAggregate:
    key = str(name).strip().upper()
    if key not in TrajectoryAggregate.__members__:
        raise InvalidArgument(f"unknown trajectory aggregate {name!r}; expected best or mean")
    return TrajectoryAggregate[key]


@dataclass(frozen=True)
class RegimeConfig:
    regime: Regime
    target_task: AlgorithmId
    base_task: AlgorithmId | None = None
    lr: float = defaults.LEARNING_RATE
    batch: int = defaults.BATCH_SIZE
    patience: int = defaults.PATIENCE
    trajectories: int = defaults.TRAJECTORIES
    trajectory_aggregate: TrajectoryAggregate = TrajectoryAggregate.BEST
    max_epochs: int = defaults.MAX_EPOCHS
    seed: int = 0
    temperature: float = defaults.GUMBEL_TEMPERATURE
    na_selection_bce: bool = False
    include_base_loss: bool = True

    def __post_init__(self):
        if self.regime.needs_base and self.base_task is None:
            raise InvalidArgument(f"regime {self.regime.value} needs a base task")
        if self.base_task is not None and self.base_task.framework is not self.target_task.framework:
            raise InvalidArgument(
                f"base {self.base_task.value} and target {self.target_task.value} use different frameworks"
            )
        if self.regime is Regime.MULTITASK and self.base_task is self.target_task:
            raise InvalidArgument("multi-task training needs two different tasks")
        for name in ("batch", "trajectories", "max_epochs"):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.patience < 0:
            raise InvalidArgument(f"patience must be >= 0, got {self.patience}")
        if self.lr <= 0:
            raise InvalidArgument(f"learning rate must be > 0, got {self.lr}")
        if self.temperature <= 0:
            raise InvalidArgument(f"temperature must be > 0, got {self.temperature}")


@dataclass(frozen=True)
class ExperimentConfig:
    """One full pipeline run. Every field is a flat key of the YAML config file."""

    regime: str = "TF"
    arch: str = "NE"
    target: str = "DIJKSTRA_S"
    base: str | None = None
    extra_bases: tuple = ()
    lr: float = defaults.LEARNING_RATE
    batch: int = defaults.BATCH_SIZE
    patience: int = defaults.PATIENCE
    trajectories: int = defaults.TRAJECTORIES
    trajectory_aggregate: str = "BEST"
    max_epochs: int = defaults.MAX_EPOCHS
    temperature: float = defaults.GUMBEL_TEMPERATURE
    na_selection_bce: bool = False
    include_base_loss: bool = True
    hidden_dim: int | None = None
    seed: int = 0
    families: tuple = defaults.FAMILIES
    train_nodes: int = defaults.DESK_TRAIN_NODES
    train_count: int = defaults.DESK_TRAIN_COUNT
    eval_sizes: tuple = defaults.DESK_EVAL_SIZES
    eval_count: int = defaults.DESK_EVAL_COUNT
    ba_attachment: int = defaults.BA_ATTACHMENT
    out: str = "runs/desk"

    def __post_init__(self):
        object.__setattr__(self, "families", tuple(parse_family(f).value for f in self.families))
        object.__setattr__(self, "eval_sizes", tuple(int(s) for s in self.eval_sizes))
        object.__setattr__(self, "extra_bases", tuple(parse_algorithm(b).value for b in self.extra_bases))
        if not self.eval_sizes:
            raise ConfigError("eval_sizes must not be empty")
        if not self.families:
            raise ConfigError("families must not be empty")
        if any(s < 2 for s in self.eval_sizes) or self.train_nodes < 2:
            raise ConfigError("graph sizes must be >= 2")
        if self.train_count < 1 or self.eval_count < 1:
            raise ConfigError("train_count and eval_count must be >= 1")
        # validates regime / task names and combinations
        self.regime_config()

    def regime_config(self) -> RegimeConfig:
        regime = parse_regime(self.regime)
        target = parse_algorithm(self.target)
        base = parse_algorithm(self.base) if self.base else None
        if base is None and regime.needs_base:
            base = BASE_FOR_TARGET.get(target)
        return RegimeConfig(
            regime=regime,
            target_task=target,
            base_task=base,
            lr=self.lr,
            batch=self.batch,
            patience=self.patience,
            trajectories=self.trajectories,
            trajectory_aggregate=_parse_aggregate(self.trajectory_aggregate),
            max_epochs=self.max_epochs,
            seed=self.seed,
            temperature=self.temperature,
            na_selection_bce=self.na_selection_bce,
            include_base_loss=self.include_base_loss,
        )

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def with_overrides(self, **overrides):
        """Return a copy with the non-None overrides applied (CLI flags over file values)."""
        clean = {k: v for k, v in overrides.items() if v is not None}
        unknown = set(clean) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return replace(self, **clean)

    def to_dict(self):
        out = asdict(self)
        out["families"] = list(self.families)
        out["eval_sizes"] = list(self.eval_sizes)
        out["extra_bases"] = list(self.extra_bases)
        return out


_FIELD_TYPES = {
    "lr": float, "temperature": float,
    "batch": int, "patience": int, "trajectories": int, "max_epochs": int, "seed": int,
    "train_nodes": int, "train_count": int, "eval_count": int, "ba_attachment": int,
}


def _coerce(key, value):
    if key in _FIELD_TYPES:
        kind = _FIELD_TYPES[key]
        if isinstance(value, str):
            # PyYAML reads exponent forms like 5e-4 as strings
            try:
                value = float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key!r} must be a number, got {value!r}")
        if kind is int and float(value) != int(value):
            raise ConfigError(f"config key {key!r} must be an integer, got {value!r}")
        return kind(value)
    if key in ("na_selection_bce", "include_base_loss"):
        if not isinstance(value, bool):
            raise ConfigError(f"config key {key!r} must be true or false, got {value!r}")
        return value
    if key in ("families", "eval_sizes", "extra_bases"):
        if isinstance(value, (str, int)):
            value = [value]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"config key {key!r} must be a list, got {value!r}")
        return tuple(value)
    if key == "hidden_dim":
        return None if value is None else int(value)
    return None if value is None else str(value)


def load_config(path) -> ExperimentConfig:
    """Read a flat YAML mapping into an ExperimentConfig; unknown keys are an error."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping, got {type(raw).__name__}")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys: {', '.join(unknown)}")
    values = {k: _coerce(k, v) for k, v in raw.items()}
    try:
        cfg = ExperimentConfig(**values)
    except InvalidArgument as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    logger.info("loaded config %s (hash %s)", path, config_hash(cfg))
    return cfg


def config_hash(cfg) -> str:
    """First 16 hex chars of SHA-256 over the canonical JSON of the config, output directory excluded."""
    payload = cfg.to_dict() if hasattr(cfg, "to_dict") else dict(cfg)
    payload.pop("out", None)
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
