"""One TOML file configures every stage.

Sections: ``channel``, ``model``, ``train_ae``, ``dqn``, ``eval``. Missing keys
take their defaults, unknown keys are rejected and every error names the
offending key path (e.g. ``dqn.gamma``).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field

from .channel import ChannelConstants
from .dqn import DqnConfig
from .eval import DEFAULT_SNR_GRID
from .model import ModelConfig
from .train import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    snr_grid: tuple[float, ...] = DEFAULT_SNR_GRID
    n_bits: int = 1_024_000
    workers: int = 1
    image_snr_db: float = 10.0
    timing_bits: int = 200_000
    deploy_threshold: float = 0.1

    def __post_init__(self):
        if not self.snr_grid:
            raise ValueError("eval.snr_grid must not be empty")
        if self.n_bits <= 0 or self.timing_bits <= 0:
            raise ValueError("eval.n_bits and eval.timing_bits must be positive")
        if self.workers < 1:
            raise ValueError("eval.workers must be >= 1")
        if self.deploy_threshold < 0:
            raise ValueError("eval.deploy_threshold must be >= 0")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["snr_grid"] = list(self.snr_grid)
        return d


SECTIONS = {
    "channel": ChannelConstants,
    "model": ModelConfig,
    "train_ae": TrainConfig,
    "dqn": DqnConfig,
    "eval": EvalConfig,
}


@dataclass(frozen=True)
class Config:
    channel: ChannelConstants = field(default_factory=ChannelConstants)
    model: ModelConfig = field(default_factory=ModelConfig)
    train_ae: TrainConfig = field(default_factory=TrainConfig)
    dqn: DqnConfig = field(default_factory=DqnConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            d = dataclasses.asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
        return out

    @property
    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]

    def with_seed(self, seed: int) -> "Config":
        return dataclasses.replace(
            self,
            train_ae=dataclasses.replace(self.train_ae, seed=seed),
            dqn=dataclasses.replace(self.dqn, seed=seed),
        )


def _coerce(path: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                                  for v in value):
            raise ConfigError(f"{path}: expected a list of numbers, got {value!r}")
        return tuple(float(v) for v in value)
    raise ConfigError(f"{path}: unsupported setting")


def _build_section(name: str, cls, values: dict):
    defaults = cls()
    fields = {f.name for f in dataclasses.fields(cls) if f.init}
    kwargs = {}
    for key, value in values.items():
        path = f"{name}.{key}"
        if key not in fields:
            raise ConfigError(f"{path}: unknown key")
        kwargs[key] = _coerce(path, value, getattr(defaults, key))
    try:
        return cls(**kwargs)
    except ValueError as exc:
        # find the key whose value alone trips validation
        for key, value in kwargs.items():
            try:
                cls(**{key: value})
            except ValueError:
                raise ConfigError(f"{name}.{key}: {exc}") from None
        raise ConfigError(f"{name}: {exc}") from None


def config_from_dict(data: dict) -> Config:
    parts = {}
    for section, values in data.items():
        if section not in SECTIONS:
            raise ConfigError(f"{section}: unknown section")
        if not isinstance(values, dict):
            raise ConfigError(f"{section}: expected a table")
        parts[section] = _build_section(section, SECTIONS[section], values)
    return Config(**parts)


def parse_config(path) -> Config:
    """Load a TOML config; ``"default"`` (or ``None``) means all defaults."""
    if path is None or str(path) == "default":
        return Config()
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return config_from_dict(data)
