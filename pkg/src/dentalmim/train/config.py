"""Run configuration dataclasses with strict nested loading."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

from ..errors import ConfigError

METHODS = ("simmim", "ummae")


@dataclass(frozen=True)
class OptimConfig:
    base_lr: float = 1e-4
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_epochs: float = 10
    total_epochs: float = 100
    min_lr: float = 0.0
    schedule: str = "cosine"
    batch_size: int = 1
    # micro-batches per optimizer step; 0 accumulates over the whole epoch
    accum_steps: int = 1

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ConfigError(f"base_lr must be > 0, got {self.base_lr}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {b}")
        if self.weight_decay < 0 or self.min_lr < 0 or self.eps <= 0:
            raise ConfigError("weight_decay and min_lr must be >= 0, eps > 0")
        if not 0 <= self.warmup_epochs <= self.total_epochs or self.total_epochs <= 0:
            raise ConfigError(f"need 0 <= warmup_epochs <= total_epochs, got "
                              f"{self.warmup_epochs} / {self.total_epochs}")
        if self.min_lr > self.base_lr:
            raise ConfigError("min_lr exceeds base_lr")
        if self.schedule != "cosine":
            raise ConfigError(f"unsupported schedule {self.schedule!r}")
        if self.batch_size < 1 or self.accum_steps < 0:
            raise ConfigError("batch_size must be >= 1 and accum_steps >= 0")


@dataclass(frozen=True)
class PretrainConfig:
    method: str = "simmim"
    backbone: Any = "swin_b"
    image_size: tuple = (800, 600)  # width, height
    unit_px: int = 16
    mask_ratio: float = 0.2
    secondary_ratio: float = 0.25
    secondary_only: bool = False
    decoder_dim: int = 512
    decoder_depth: int = 1
    decoder_heads: int = 8
    optim: OptimConfig = field(default_factory=lambda: OptimConfig(base_lr=8e-4))

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if not 0.0 <= self.mask_ratio <= 1.0 or not 0.0 <= self.secondary_ratio <= 1.0:
            raise ConfigError("mask ratios must lie in [0, 1]")
        _check_size(self.image_size)

    @property
    def epochs(self) -> int:
        return int(self.optim.total_epochs)


@dataclass(frozen=True)
class FinetuneConfig:
    backbone: Any = "swin_b"
    detector: Any = "default"
    image_size: tuple = (800, 600)
    optim: OptimConfig = field(default_factory=lambda: OptimConfig(base_lr=1e-4, warmup_epochs=1,
                                                                   total_epochs=36, beta2=0.999))
    max_steps: Optional[int] = None
    rotations: int = 4
    eval_every: int = 1
    eval_train: bool = False
    flip_prob: float = 0.5
    noise_sigma: float = 0.0
    freeze_stages: int = 0
    transfer: bool = True

    def __post_init__(self):
        _check_size(self.image_size)
        if not 1 <= self.rotations <= 4:
            raise ConfigError("rotations must be between 1 and 4")
        if not 0 <= self.freeze_stages <= 4:
            raise ConfigError("freeze_stages must be between 0 and 4")
        if not 0.0 <= self.flip_prob <= 1.0 or self.noise_sigma < 0:
            raise ConfigError("flip_prob must lie in [0, 1] and noise_sigma >= 0")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")


def _check_size(size):
    if len(size) != 2 or min(size) < 1:
        raise ConfigError(f"image_size must be (width, height), got {size!r}")


def pretrain_defaults(method: str, **overrides) -> PretrainConfig:
    """Published settings of each pre-training method."""
    if method == "simmim":
        optim = OptimConfig(base_lr=8e-4, weight_decay=0.05, beta1=0.9, beta2=0.999,
                            warmup_epochs=10, total_epochs=100)
        base = PretrainConfig(method="simmim", mask_ratio=0.2, optim=optim)
    elif method == "ummae":
        optim = OptimConfig(base_lr=1.5e-4, weight_decay=0.05, beta1=0.9, beta2=0.95,
                            warmup_epochs=10, total_epochs=800)
        base = PretrainConfig(method="ummae", secondary_ratio=0.25, optim=optim)
    else:
        raise ConfigError(f"method must be one of {METHODS}, got {method!r}")
    return merge(base, overrides) if overrides else base


def to_dict(cfg) -> dict:
    return _jsonable(asdict(cfg))


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def from_dict(cls, data: dict, where: str = ""):
    """Build ``cls`` from a mapping; unknown keys raise :class:`ConfigError`."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where or cls.__name__}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join((where + '.' if where else '') + k for k in unknown)}")
    kwargs = {}
    for k, v in data.items():
        t = hints[k]
        if dataclasses.is_dataclass(t) and isinstance(v, dict):
            v = from_dict(t, v, f"{where}.{k}" if where else k)
        elif t is tuple or typing.get_origin(t) is tuple:
            v = tuple(v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def merge(cfg, overrides: dict):
    """Apply a (possibly nested) override mapping onto a config instance."""
    base = to_dict(cfg)
    _deep_update(base, overrides, type(cfg).__name__)
    return from_dict(type(cfg), base)


def _deep_update(dst: dict, src: dict, where: str):
    for k, v in src.items():
        if k not in dst:
            raise ConfigError(f"unknown key {where}.{k}")
        if isinstance(v, dict) and isinstance(dst[k], dict):
            _deep_update(dst[k], v, f"{where}.{k}")
        else:
            dst[k] = v
