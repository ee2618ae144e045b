"""JSON run configuration with strict, fail-fast validation.

The whole file parses into nested dataclasses before any command does work.
Unknown keys are rejected with their dotted path, types are checked
strictly (a bool is not an int), and every field has a default equal to the
full-scale setting where one exists.
"""

import dataclasses
import json
import typing
from dataclasses import dataclass, field

from .audio import PreprocessConfig
from .errors import ConfigError
from .losses import LossWeights
from .networks import ModelSpec
from .training import TrainConfig

CONFIG_VERSION = 1


@dataclass(frozen=True)
class ToySection:
    """Parameters for the synthetic tone/shape dataset."""

    n_classes: int = 4
    per_class: int = 8
    sample_rate: int = 16000
    clip_seconds: float = 0.5

    def __post_init__(self):
        if self.n_classes < 2 or self.per_class < 1:
            raise ValueError("toy dataset needs at least 2 classes and 1 pair per class")


@dataclass(frozen=True)
class DatasetSection:
    kind: str = "paired"  # "toy" synthesizes the dataset into root first
    root: str = "data"
    toy: ToySection = field(default_factory=ToySection)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)

    def __post_init__(self):
        if self.kind not in ("paired", "toy"):
            raise ValueError(f"dataset.kind must be 'paired' or 'toy', got {self.kind!r}")


@dataclass(frozen=True)
class EvalSection:
    batch_size: int = 32
    is_splits: int = 1

    def __post_init__(self):
        if self.batch_size < 1 or self.is_splits < 1:
            raise ValueError("eval.batch_size and eval.is_splits must be positive")


def _default_model():
    # 13 sound classes at full scale
    return ModelSpec(n_classes=13)


@dataclass(frozen=True)
class RunConfig:
    version: int = CONFIG_VERSION
    run_name: str = "run"
    runs_dir: str = "runs"
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSpec = field(default_factory=_default_model)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)

    def __post_init__(self):
        if self.version != CONFIG_VERSION:
            raise ValueError(
                f"config version {self.version} not supported (expected {CONFIG_VERSION})"
            )


def _coerce(value, hint, path):
    if dataclasses.is_dataclass(hint):
        return _from_mapping(hint, value, path)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported config field type {hint!r}")


def _from_mapping(cls, raw, path):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {raw!r}")
    hints = typing.get_type_hints(cls)
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        child = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigError(f"{child}: unknown config key")
        kwargs[key] = _coerce(value, hints[key], child)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}")


def config_from_dict(raw) -> RunConfig:
    return _from_mapping(RunConfig, raw, "")


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: config file not found")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})")
    return config_from_dict(raw)


def override_seed(config: RunConfig, seed) -> RunConfig:
    """Apply a --seed flag; it wins over the file everywhere seeds are used."""
    return dataclasses.replace(
        config, train=dataclasses.replace(config.train, seed=int(seed))
    )
