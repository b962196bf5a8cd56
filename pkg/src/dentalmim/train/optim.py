"""AdamW with decoupled weight decay and a non-finite gradient guard."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import torch
import torch.nn as nn

from ..errors import NonFinite


@dataclass
class AdamState:
    step: int = 0
    exp_avg: list = field(default_factory=list)
    exp_avg_sq: list = field(default_factory=list)


@torch.no_grad()
def adamw_step(params: Sequence[torch.Tensor], grads: Sequence[torch.Tensor], state: AdamState, lr: float,
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
               weight_decay: float | Sequence[float] = 0.0) -> AdamState:
    """One in-place update of ``params``.

    The decay term ``lr * wd * p`` is applied to the weights directly, not
    folded into the gradient.  Raises :class:`NonFinite` before touching any
    parameter if a gradient holds NaN or Inf.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is not None and g.shape != p.shape:
            raise ValueError(f"gradient {i} shape {tuple(g.shape)} != parameter {tuple(p.shape)}")
        if g is not None and not torch.isfinite(g).all():
            raise NonFinite(f"non-finite gradient in parameter {i}")
    if not state.exp_avg:
        state.exp_avg = [torch.zeros_like(p) for p in params]
        state.exp_avg_sq = [torch.zeros_like(p) for p in params]
    wds = [weight_decay] * len(params) if isinstance(weight_decay, (int, float)) else list(weight_decay)
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for p, g, m, v, wd in zip(params, grads, state.exp_avg, state.exp_avg_sq, wds):
        if g is None:
            continue
        p.mul_(1.0 - lr * wd)
        m.mul_(beta1).add_(g, alpha=1.0 - beta1)
        v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
        denom = (v.sqrt() / math.sqrt(bc2)).add_(eps)
        p.addcdiv_(m, denom, value=-lr / bc1)
    return state


def decay_groups(model: nn.Module, weight_decay: float) -> tuple[list, list[float], list[str]]:
    """Trainable parameters with their decay; norms, biases, tables and tokens get none."""
    params, wds, names = [], [], []
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        no_decay = (p.ndim <= 1 or name.endswith(".bias") or "relative_position_bias_table" in name
                    or "mask_token" in name or "placeholder" in name)
        params.append(p)
        wds.append(0.0 if no_decay else weight_decay)
        names.append(name)
    return params, wds, names


class AdamW:
    """Stateful wrapper around :func:`adamw_step` for a fixed parameter list."""

    def __init__(self, params: Iterable[torch.Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float | Sequence[float] = 0.0):
        self.params = list(params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adamw_step(self.params, [p.grad for p in self.params], self.state, self.lr,
                   self.betas[0], self.betas[1], self.eps, self.weight_decay)

    def state_bytes(self) -> int:
        return sum(t.numel() * t.element_size() for t in self.state.exp_avg + self.state.exp_avg_sq)
