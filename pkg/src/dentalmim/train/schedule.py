"""Learning-rate schedule: linear warm-up then half-cosine decay."""

from __future__ import annotations

import math

from .config import OptimConfig


def cosine_warmup_lr(step: float, steps_per_epoch: int, cfg: OptimConfig) -> float:
    """Learning rate at optimizer step ``step`` (fractional steps allowed).

    Ramps linearly from 0 to ``base_lr`` over the warm-up epochs, then decays
    along a half cosine to ``min_lr`` at ``total_epochs``; constant after.
    """
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    warm = cfg.warmup_epochs * steps_per_epoch
    total = cfg.total_epochs * steps_per_epoch
    if step < warm:
        return cfg.base_lr * step / warm
    if total <= warm:
        return cfg.base_lr
    t = min(1.0, (step - warm) / (total - warm))
    return cfg.min_lr + 0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + math.cos(math.pi * t))
