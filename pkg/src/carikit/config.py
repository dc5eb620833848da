"""Declarative configuration: one YAML file drives models, training, inversion and the service.

Every consumer receives a validated ``Config``; validation errors carry the
dotted field path so CLI users can locate the offending key.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; message starts with the dotted field path."""


@dataclass(frozen=True)
class ModelConfig:
    d_z: int = 64
    d_w: int = 64
    n_scales: int = 4
    channels: tuple[int, ...] = (48, 32, 24, 16)
    mapping_layers: int = 3
    # style-modulation flavor baked into every checkpoint ("demod" = weight demodulation)
    modulation: str = "demod"

    @property
    def resolution(self) -> int:
        return 4 * 2 ** (self.n_scales - 1)

    @property
    def n_style_layers(self) -> int:
        return 2 * self.n_scales


@dataclass(frozen=True)
class LossWeights:
    adv: float = 1.0
    gan: float = 10.0
    cyc: float = 10.0
    icyc: float = 1000.0
    attr: float = 10.0
    r1_gamma: float = 10.0


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    iterations: int = 1000
    lr: float = 0.002
    beta1: float = 0.0
    beta2: float = 0.99
    r1_interval: int = 16
    # discriminator-only steps before block updates begin, so adversarial
    # pressure is meaningful from the first logged iteration
    d_warmup: int = 50
    # std of the final block convs at init; 0 = exact identity residual start
    block_init_std: float = 0.0
    seed: int = 0
    checkpoint_interval: int = 200
    log_every: int = 1
    weights: LossWeights = field(default_factory=LossWeights)
    # ablation switches: terms absent from the tuple contribute nothing
    loss_terms: tuple[str, ...] = ("adv", "cyc", "attr")


@dataclass(frozen=True)
class DataConfig:
    # full-scale label space is 50 attributes; the desk config uses 12
    n_attributes: int = 50
    exaggeration: float = 2.2
    jitter: float = 0.5
    n_train: int = 2048
    n_heldout: int = 512
    seed: int = 7


@dataclass(frozen=True)
class InversionConfig:
    stage1_steps: int = 250
    stage2_steps: int = 250
    stage1_lr: float = 0.05
    stage2_lr: float = 0.02
    perturb_factor: float = 0.05
    noise_weight: float = 1e4
    pyramid_levels: int = 2
    seed: int = 0


@dataclass(frozen=True)
class PerceptionConfig:
    n_attributes: int = 50
    width: int = 32
    embed_dim: int = 32
    lr: float = 2e-3
    epochs: int = 6
    batch_size: int = 64
    seed: int = 0


@dataclass(frozen=True)
class ServiceConfig:
    queue_size: int = 8
    workers: int = 1
    max_upload_bytes: int = 4_000_000


@dataclass(frozen=True)
class Config:
    version: int = CONFIG_VERSION
    model: ModelConfig = field(default_factory=ModelConfig)
    mix_boundary: int = 2
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    inversion: InversionConfig = field(default_factory=InversionConfig)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)


def _build(cls, data: Any, path: str):
    if not dataclasses.is_dataclass(cls):
        return _coerce_scalar(cls, data, path)
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"{path + '.' if path else ''}{key}: unknown field")
    kwargs = {}
    for name, f in fields.items():
        if name in data:
            kwargs[name] = _build(_field_type(f), data[name], f"{path + '.' if path else ''}{name}")
    return cls(**kwargs)


def _field_type(f: dataclasses.Field):
    # dataclass fields carry string annotations under `from __future__ import annotations`
    t = f.type
    if isinstance(t, str):
        t = eval(t, globals())  # noqa: S307 - module-local names only
    return t


def _coerce_scalar(t, value, path: str):
    origin = getattr(t, "__origin__", None)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        inner = t.__args__[0]
        return tuple(_coerce_scalar(inner, v, f"{path}[{i}]") for i, v in enumerate(value))
    if t is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if t is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if t is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported value {value!r}")


def _validate(cfg: Config) -> Config:
    m = cfg.model
    checks = [
        (m.d_z >= 1, "model.d_z: must be >= 1"),
        (m.d_w >= 1, "model.d_w: must be >= 1"),
        (m.n_scales >= 1, "model.n_scales: must be >= 1"),
        (len(m.channels) == m.n_scales, "model.channels: length must equal model.n_scales"),
        (all(c >= 1 for c in m.channels), "model.channels: entries must be >= 1"),
        (m.modulation in ("demod", "plain"), "model.modulation: must be 'demod' or 'plain'"),
        (0 <= cfg.mix_boundary <= m.n_scales, "mix_boundary: must be in [0, n_scales]"),
        (cfg.train.batch_size >= 2, "train.batch_size: must be >= 2"),
        (cfg.train.lr > 0, "train.lr: must be > 0"),
        (cfg.train.r1_interval >= 1, "train.r1_interval: must be >= 1"),
        (cfg.train.d_warmup >= 0, "train.d_warmup: must be >= 0"),
        (cfg.train.block_init_std >= 0, "train.block_init_std: must be >= 0"),
        (cfg.inversion.stage1_steps >= 0, "inversion.stage1_steps: must be >= 0"),
        (cfg.inversion.stage2_steps >= 0, "inversion.stage2_steps: must be >= 0"),
        (cfg.inversion.noise_weight >= 0, "inversion.noise_weight: must be >= 0"),
        (cfg.perception.n_attributes >= 1, "perception.n_attributes: must be >= 1"),
        (cfg.service.queue_size >= 1, "service.queue_size: must be >= 1"),
    ]
    w = cfg.train.weights
    for name in ("adv", "gan", "cyc", "icyc", "attr", "r1_gamma"):
        checks.append((getattr(w, name) >= 0, f"train.weights.{name}: must be >= 0"))
    for term in cfg.train.loss_terms:
        checks.append((term in ("adv", "cyc", "attr"), f"train.loss_terms: unknown term {term!r}"))
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)
    if cfg.version != CONFIG_VERSION:
        raise ConfigError(f"version: expected {CONFIG_VERSION}, got {cfg.version}")
    return cfg


def config_from_dict(data: dict) -> Config:
    return _validate(_build(Config, data, ""))


def load_config(path: str | Path, overrides: dict[str, Any] | None = None) -> Config:
    """Load a YAML config file and apply dotted-key overrides (CLI --set)."""
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a mapping")
    for key, value in (overrides or {}).items():
        _set_dotted(data, key, value)
    return config_from_dict(data)


def _set_dotted(data: dict, dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    node = data
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{dotted}: cannot override non-mapping key {part!r}")
    node[parts[-1]] = value


def parse_override(text: str) -> tuple[str, Any]:
    """Parse a `key.path=value` CLI override; values use YAML scalar syntax."""
    if "=" not in text:
        raise ConfigError(f"override {text!r}: expected key=value")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)
