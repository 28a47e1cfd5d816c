"""YAML configuration: one dataclass per section, unknown keys rejected.

    data:      what gen-data produces
    model:     experts, gates, head and embedded known solver
    train:     optimizer, objective and windows
    rollout:   posterior predictive rollouts
    extension: smooth-extension solver settings

Missing keys take the defaults below. `--set section.key=value` overrides are
parsed as YAML scalars and applied after the file.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError


def _choice(section, key, value, choices):
    if value not in choices:
        raise ConfigError(f"{section}.{key}: must be one of {choices}, got {value!r}")


def _positive(section, obj, *keys):
    for key in keys:
        value = getattr(obj, key)
        if value is not None and not value > 0:
            raise ConfigError(f"{section}.{key}: must be positive, got {value!r}")


@dataclass
class DataConfig:
    kind: str = "disk"
    n: int = 64
    half_width: float = 1.25
    count: int = 500
    val_count: int = 100
    seed: int = 0
    # Gaussian process draws
    length_scale: float = 0.3
    variance: float = 1.0
    exterior_band: float = 0.1
    # quarter-disk Poisson
    freq_max: float = 10.0
    n_cosines: int = 10
    points_per_wavelength: float = 4.0
    extend_inputs: bool = True
    extension_method: str = "reduced"
    # Burgers closure
    n_fine: int = 1024
    stride: int = 8
    filter_width: int | None = None
    nu: float = 1e-3
    dt: float = 1e-3
    snapshots: int = 4000
    save_every: int = 1
    ic_modes: int = 8
    amplitude: float = 0.5
    dealias: bool = False

    def __post_init__(self):
        _choice("data", "kind", self.kind, ("disk", "poisson", "burgers"))
        _choice("data", "extension_method", self.extension_method, ("normal", "reduced"))
        _positive("data", self, "n", "half_width", "count", "length_scale", "variance", "freq_max",
                  "n_cosines", "points_per_wavelength", "n_fine", "stride", "filter_width", "nu", "dt",
                  "snapshots", "save_every", "ic_modes", "amplitude")
        if self.exterior_band < 0 or 1.0 + self.exterior_band > self.half_width:
            raise ConfigError(f"data.exterior_band: 1 + band must lie in [1, half_width], got {self.exterior_band}")
        if self.val_count < 0:
            raise ConfigError(f"data.val_count: must be >= 0, got {self.val_count}")
        if self.filter_width is None:
            self.filter_width = self.stride
        if self.kind == "burgers" and self.n_fine % self.stride:
            raise ConfigError(f"data.stride: {self.stride} does not divide n_fine {self.n_fine}")


@dataclass
class ModelConfig:
    experts: int = 2
    zero_expert: bool = True
    gating: str = "network"
    gate_hidden: list = field(default_factory=lambda: [64, 64])
    n_layers: int = 2
    width: int = 16
    keep: int | None = None
    hidden: list = field(default_factory=lambda: [32, 32])
    g_param: str = "tensor"
    skip_last: bool = True
    head: str = "deterministic"
    solver: str = "none"
    nu: float | None = None
    dt: float | None = None

    def __post_init__(self):
        _choice("model", "gating", self.gating, ("network", "fixed", "domain"))
        _choice("model", "g_param", self.g_param, ("tensor", "mlp"))
        _choice("model", "head", self.head, ("deterministic", "probabilistic"))
        _choice("model", "solver", self.solver, ("none", "burgers1d", "chorin2d"))
        _positive("model", self, "experts", "n_layers", "width", "keep", "nu", "dt")
        if self.gating == "domain" and (self.experts != 1 or not self.zero_expert):
            raise ConfigError("model.gating: domain gates need experts=1 plus the zero expert")


@dataclass
class TrainConfig:
    objective: str = "least-squares"
    lr: float = 1.25e-4
    batch_size: int = 8
    warmup_steps: int = 100
    clip_norm: float = 1.0
    prior_std: float = 1.0
    window: int = 8
    seed: int = 0
    epochs: int = 10
    rho_init: float = -7.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        _choice("train", "objective", self.objective, ("least-squares", "elbo"))
        _positive("train", self, "lr", "batch_size", "clip_norm", "prior_std", "window", "epochs", "eps")
        if self.warmup_steps < 0:
            raise ConfigError(f"train.warmup_steps: must be >= 0, got {self.warmup_steps}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError(f"train.beta1/beta2: must lie in [0, 1), got {self.beta1}, {self.beta2}")


@dataclass
class RolloutConfig:
    steps: int = 40
    samples: int = 1
    seed: int = 0
    bin_axis: int | None = None

    def __post_init__(self):
        _positive("rollout", self, "steps", "samples")


@dataclass
class ExtensionConfig:
    method: str = "reduced"
    tol: float = 1e-10
    max_iters: int | None = None
    preconditioner: bool = False
    constraint_tol: float = 1e-6
    cutoff: int | None = None

    def __post_init__(self):
        _choice("extension", "method", self.method, ("normal", "reduced"))
        _positive("extension", self, "tol", "max_iters", "constraint_tol", "cutoff")


SECTIONS = {
    "data": DataConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "rollout": RolloutConfig,
    "extension": ExtensionConfig,
}


@dataclass
class Config:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    rollout: RolloutConfig = field(default_factory=RolloutConfig)
    extension: ExtensionConfig = field(default_factory=ExtensionConfig)

    @classmethod
    def from_dict(cls, raw: dict | None) -> Config:
        raw = raw or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"config: top level must be a mapping, got {type(raw).__name__}")
        sections = {}
        for name, values in raw.items():
            if name not in SECTIONS:
                raise ConfigError(f"config: unknown section {name!r}")
            sections[name] = _build(name, values or {})
        return cls(**sections)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def with_overrides(self, overrides) -> Config:
        raw = self.to_dict()
        for item in overrides or ():
            key, sep, text = item.partition("=")
            section, dot, name = key.strip().partition(".")
            if not sep or not dot:
                raise ConfigError(f"override {item!r}: expected section.key=value")
            if section not in SECTIONS:
                raise ConfigError(f"override {item!r}: unknown section {section!r}")
            raw[section][name] = yaml.safe_load(text)
        return Config.from_dict(raw)


def _build(name, values):
    cls = SECTIONS[name]
    if not isinstance(values, dict):
        raise ConfigError(f"config: section {name!r} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"config: unknown key(s) in [{name}]: {', '.join(unknown)}")
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"config: bad value in [{name}]: {e}") from None


def load_config(path=None, overrides=()) -> Config:
    raw = {}
    if path is not None:
        with open(Path(path)) as f:
            raw = yaml.safe_load(f) or {}
    return Config.from_dict(raw).with_overrides(overrides)
