"""Configuration sections and the ``key = value`` file format.

A :class:`RunConfig` is a set of dataclass sections. On disk it is one
``section.field = value`` assignment per line; ``#`` starts a comment.
Unknown keys raise :class:`ConfigurationError`.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .exceptions import ConfigurationError


@dataclass
class ModelConfig:
    template_size: int = 32
    search_size: int = 64
    patch_size: int = 8
    dim: int = 32
    depth: int = 2
    heads: int = 2
    mlp_ratio: int = 2
    head_channels: int = 32
    upsample: int = 2
    cls_hidden: int = 64
    top_k: int = 3
    value_from_group: bool = True

    @property
    def template_grid(self):
        return self.template_size // self.patch_size

    @property
    def search_grid(self):
        return self.search_size // self.patch_size

    @property
    def head_grid(self):
        return self.search_grid * self.upsample

    @property
    def cell(self):
        """Search-image pixels per head-grid cell."""
        return self.search_size / self.head_grid

    def validate(self):
        if self.dim % self.heads:
            raise ConfigurationError(f"dim={self.dim} is not divisible by heads={self.heads}")
        for side in (self.template_size, self.search_size):
            if side % self.patch_size:
                raise ConfigurationError(f"patch_size={self.patch_size} does not divide {side}")
        if self.upsample not in (2, 4):
            raise ConfigurationError("upsample must be 2 or 4")
        if min(self.depth, self.top_k - 1, self.dim - 1, self.head_channels - 1) < 0:
            raise ConfigurationError("depth must be >= 0; top_k, dim, head_channels >= 1")


@dataclass
class LossConfig:
    alpha: float = 2.0
    beta: float = 5.0
    gamma: float = 2.0

    def validate(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ConfigurationError("loss weights must be nonnegative")


@dataclass
class TrackerConfig:
    threshold: float = 0.5
    capacity: int = 6
    base_context: float = 2.0
    min_size: float = 4.0
    use_uld: bool = True
    use_pmn: bool = True

    def validate(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigurationError("threshold must lie in [0, 1]")
        if self.capacity < 1:
            raise ConfigurationError("capacity must be positive")
        if self.base_context <= 0 or self.min_size <= 0:
            raise ConfigurationError("base_context and min_size must be positive")


@dataclass
class KalmanConfig:
    process_pos: float = 1.0
    process_vel: float = 0.25
    measurement: float = 4.0
    init_vel_var: float = 25.0

    def validate(self):
        if min(self.process_pos, self.process_vel, self.measurement, self.init_vel_var) <= 0:
            raise ConfigurationError("Kalman noise levels must be positive")


@dataclass
class DataConfig:
    frame_size: int = 64
    length: int = 60
    train_sequences: int = 48
    eval_sequences: int = 20
    min_target: float = 12.0
    max_target: float = 18.0
    speed: float = 1.0
    occlusion_prob: float = 0.6
    occlusion_length: int = 12
    deform_prob: float = 0.3
    out_of_view_prob: float = 0.0
    label_noise: float = 0.1
    occluded_fraction: float = 0.5
    seed: int = 0

    def validate(self):
        if self.frame_size < 16 or self.length < 2:
            raise ConfigurationError("frame_size must be >= 16 and length >= 2")
        if not 0 < self.min_target <= self.max_target < self.frame_size:
            raise ConfigurationError("target size range must satisfy 0 < min <= max < frame_size")
        if not 0 <= self.occluded_fraction <= 1:
            raise ConfigurationError("occluded_fraction must lie in [0, 1]")


@dataclass
class TrainConfig:
    steps: int = 3000
    lr: float = 2e-3
    batch: int = 12
    optimizer: str = "adam"
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 1

    def validate(self):
        if self.steps < 0 or self.batch < 1 or self.lr <= 0:
            raise ConfigurationError("steps >= 0, batch >= 1, lr > 0 required")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    kalman: KalmanConfig = field(default_factory=KalmanConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train1: TrainConfig = field(default_factory=TrainConfig)
    train2: TrainConfig = field(default_factory=lambda: TrainConfig(steps=1000, lr=2e-3, batch=24, seed=2))
    seed: int = 0

    def validate(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if hasattr(value, "validate"):
                value.validate()
        return self

    def items(self):
        """Flat ``(dotted_key, value)`` pairs in declaration order."""
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if dataclasses.is_dataclass(value):
                for sub in dataclasses.fields(value):
                    yield f"{f.name}.{sub.name}", getattr(value, sub.name)
            else:
                yield f.name, value

    def set(self, key, raw):
        """Assign ``raw`` (string or value) to a dotted key, coercing its type."""
        parts = key.strip().split(".")
        target = self
        for part in parts[:-1]:
            if not hasattr(target, part) or not dataclasses.is_dataclass(getattr(target, part)):
                raise ConfigurationError(f"unknown config key {key!r}")
            target = getattr(target, part)
        name = parts[-1]
        known = {f.name: f for f in dataclasses.fields(target)}
        if name not in known or dataclasses.is_dataclass(getattr(target, name)):
            raise ConfigurationError(f"unknown config key {key!r}")
        setattr(target, name, _coerce(key, getattr(target, name), raw))

    def dumps(self):
        return "".join(f"{key} = {_format(value)}\n" for key, value in self.items())

    @classmethod
    def loads(cls, text, base=None):
        cfg = base if base is not None else cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"line {lineno}: expected 'key = value', got {line!r}")
            key, value = line.split("=", 1)
            cfg.set(key.strip(), value.strip())
        return cfg

    @classmethod
    def load(cls, path, base=None):
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read(), base=base)

    def copy(self):
        return RunConfig.loads(self.dumps())


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _coerce(key, current, raw):
    if not isinstance(raw, str):
        return type(current)(raw)
    try:
        if isinstance(current, bool):
            lowered = raw.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
    except ValueError as err:
        raise ConfigurationError(f"bad value for {key}: {raw!r}") from err
    return raw


PRESETS = {
    "desk": {},
    # Full-size geometry (128/288 crops, 16 px patches); far too slow to
    # train with the numpy engine, kept for shape checks.
    "full": {
        "model.template_size": 128,
        "model.search_size": 288,
        "model.patch_size": 16,
        "model.dim": 64,
        "model.depth": 4,
        "model.heads": 2,
        "model.head_channels": 64,
        "data.frame_size": 288,
        "data.min_target": 40.0,
        "data.max_target": 90.0,
    },
    # Tiny configuration for smoke tests.
    "tiny": {
        "model.template_size": 16,
        "model.search_size": 32,
        "model.patch_size": 8,
        "model.dim": 8,
        "model.depth": 1,
        "model.heads": 2,
        "model.head_channels": 8,
        "model.cls_hidden": 8,
        "data.frame_size": 48,
        "data.length": 12,
        "data.train_sequences": 4,
        "data.eval_sequences": 2,
        "data.min_target": 8.0,
        "data.max_target": 12.0,
        "data.occlusion_length": 4,
        "train1.steps": 4,
        "train1.batch": 2,
        "train2.steps": 4,
        "train2.batch": 4,
    },
}


def preset(name="desk"):
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    cfg = RunConfig()
    for key, value in PRESETS[name].items():
        cfg.set(key, value)
    return cfg.validate()
