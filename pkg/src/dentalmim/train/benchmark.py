"""Wall time and working memory of the two pre-training methods on one workload."""

from __future__ import annotations

import resource
import time
from dataclasses import replace
from typing import Optional

import numpy as np
import torch

from ..dataset import generate_fixture
from ..eval.reference import PRETRAIN_COST
from .config import PretrainConfig
from .data import collate, prepare
from .determinism import seed_everything
from .optim import AdamW, decay_groups
from .pretrain import build_mim_model, mim_loss, sample_masks


class SavedTensorMeter:
    """Bytes held by autograd for backward, tracked through the saved-tensor hooks."""

    def __init__(self):
        self.current = 0
        self.peak = 0
        self._seen: dict = {}

    def _pack(self, t: torch.Tensor):
        key = (t.untyped_storage().data_ptr(), t.untyped_storage().nbytes())
        if key not in self._seen:
            self._seen[key] = 0
            self.current += key[1]
            self.peak = max(self.peak, self.current)
        self._seen[key] += 1
        return t, key

    def _unpack(self, packed):
        return packed[0]

    def hooks(self):
        return torch.autograd.graph.saved_tensors_hooks(self._pack, self._unpack)

    def reset(self):
        self.current = 0
        self._seen.clear()


def _bytes(tensors) -> int:
    return sum(t.numel() * t.element_size() for t in tensors if t is not None)


def measure(cfg: PretrainConfig, n_steps: int, batch_size: int, seed: int = 0, n_images: Optional[int] = None) -> dict:
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    seed_everything(seed)
    W, H = cfg.image_size
    index = generate_fixture(n_images or batch_size, image_size=(W, H), seed=seed)
    records = prepare(index, index.ids, cfg.image_size)
    model = build_mim_model(cfg)
    model.train()
    params, wds, _ = decay_groups(model, cfg.optim.weight_decay)
    opt = AdamW(params, cfg.optim.base_lr, (cfg.optim.beta1, cfg.optim.beta2), cfg.optim.eps, wds)
    meter = SavedTensorMeter()
    ids = index.ids[:batch_size]
    batch = collate([records[i] for i in ids], model.backbone.config.in_chans, with_targets=False)

    def step_once(step: int, instrument: bool) -> float:
        masks = sample_masks(cfg, batch, seed, step)
        t0 = time.perf_counter()
        opt.zero_grad()
        if instrument:
            meter.reset()
            with meter.hooks():
                loss, _ = mim_loss(model, cfg, batch, masks)
        else:
            loss, _ = mim_loss(model, cfg, batch, masks)
        loss.backward()
        opt.step()
        return time.perf_counter() - t0

    # step 0 warms up and carries the memory hooks; the hook overhead stays out of the timed steps
    step_once(0, instrument=True)
    times = [step_once(step, instrument=False) for step in range(1, n_steps + 1)]
    param_bytes = _bytes(params)
    state_bytes = opt.state_bytes()
    return {
        "wall_time_s": float(np.sum(times)),
        "step_time_s": float(np.median(times)),
        "encoder_tokens": int(model.backbone.last_token_count),
        "activation_bytes": int(meter.peak),
        "parameter_bytes": int(param_bytes),
        "gradient_bytes": int(param_bytes),
        "optimizer_bytes": int(state_bytes),
        "peak_memory_bytes": int(meter.peak + 2 * param_bytes + state_bytes),
        "max_rss_kb": int(resource.getrusage(resource.RUSAGE_SELF).ru_maxrss),
    }


def benchmark(base: PretrainConfig, n_steps: int = 5, batch_size: int = 2, seed: int = 0) -> dict:
    """Identical backbone, image size and batch for both methods; ratios are SimMIM / UM-MAE."""
    out = {"config": {"backbone": base.backbone, "image_size": list(base.image_size),
                      "batch_size": batch_size, "n_steps": n_steps}, "methods": {}}
    for method in ("simmim", "ummae"):
        cfg = replace(base, method=method)
        out["methods"][method] = measure(cfg, n_steps, batch_size, seed)
    s, u = out["methods"]["simmim"], out["methods"]["ummae"]
    out["ratio"] = {
        "time": s["step_time_s"] / max(u["step_time_s"], 1e-12),  # medians resist scheduler noise
        "memory": s["peak_memory_bytes"] / max(u["peak_memory_bytes"], 1),
        "tokens": s["encoder_tokens"] / max(u["encoder_tokens"], 1),
    }
    out["reference"] = PRETRAIN_COST
    return out
