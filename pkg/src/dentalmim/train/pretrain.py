"""Masked-image-modeling pre-training loop."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from ..backbone import backbone_manifest, build_backbone, save_checkpoint
from ..backbone.swin import BackboneConfig, preset
from ..dataset import DatasetIndex, record_rng
from ..errors import ConfigError, NonFinite
from ..mim import SimMIM, UMMAE, random_mask, stack_masks, stack_samples, uniform_sample
from .audit import IdAudit
from .config import PretrainConfig, to_dict
from .data import Batch, collate, epoch_batches, prepare
from .determinism import seed_everything
from .optim import AdamW, decay_groups
from .schedule import cosine_warmup_lr


def backbone_config(spec) -> BackboneConfig:
    if isinstance(spec, BackboneConfig):
        return spec
    if isinstance(spec, str):
        return preset(spec)
    if isinstance(spec, dict):
        spec = dict(spec)
        name = spec.pop("preset", None)
        return preset(name, **spec) if name else BackboneConfig(**spec)
    raise ConfigError(f"cannot build a backbone from {spec!r}")


def build_mim_model(cfg: PretrainConfig) -> nn.Module:
    backbone = build_backbone(backbone_config(cfg.backbone))
    if cfg.method == "simmim":
        return SimMIM(backbone, cfg.unit_px)
    return UMMAE(backbone, cfg.unit_px, decoder_dim=cfg.decoder_dim, decoder_depth=cfg.decoder_depth,
                 decoder_heads=cfg.decoder_heads)


def sample_masks(cfg: PretrainConfig, batch: Batch, seed: int, epoch: int):
    """Per-image masks drawn from a stream keyed by (seed, image id, epoch)."""
    Hp, Wp = batch.raw.shape[-2:]
    gh, gw = Hp // cfg.unit_px, Wp // cfg.unit_px
    rngs = [record_rng(seed, i, epoch) for i in batch.ids]
    if cfg.method == "simmim":
        return stack_masks([random_mask(gh, gw, cfg.mask_ratio, r, cfg.unit_px) for r in rngs])
    return stack_samples([uniform_sample(gh, gw, cfg.secondary_ratio, r, cfg.unit_px) for r in rngs])


def mim_loss(model: nn.Module, cfg: PretrainConfig, batch: Batch, masks):
    if cfg.method == "simmim":
        return model.loss(batch.images, batch.raw, masks, batch.valid)
    kept, sec = masks
    return model.loss(batch.images, batch.raw, kept, sec, batch.valid, cfg.secondary_only)


@dataclass
class PretrainResult:
    model: nn.Module
    epoch_losses: list[float]
    step_losses: list[float] = field(default_factory=list)
    checkpoint: Optional[Path] = None
    manifest: dict = field(default_factory=dict)
    wall_time_s: float = 0.0


def checkpoint_tensors(model: nn.Module) -> dict:
    return {k: v for k, v in model.state_dict().items()}


def pretrain(index: DatasetIndex, train_ids: Sequence, cfg: PretrainConfig, seed: int = 0,
             checkpoint_path: Optional[Path] = None, audit: Optional[IdAudit] = None,
             log: Optional[Callable[[str], None]] = None) -> PretrainResult:
    """Train the encoder with the configured MIM method on ``train_ids`` only.

    One optimizer step consumes ``accum_steps`` micro-batches (the whole
    epoch when 0); the step loss is the mean over its micro-batches.
    """
    if not len(train_ids):
        raise ValueError("pre-training needs at least one training image")
    t0 = time.perf_counter()
    seed_everything(seed)
    model = build_mim_model(cfg)
    model.train()
    records = prepare(index, train_ids, cfg.image_size)
    oc = cfg.optim
    params, wds, _ = decay_groups(model, oc.weight_decay)
    opt = AdamW(params, oc.base_lr, (oc.beta1, oc.beta2), oc.eps, wds)
    n_batches = math.ceil(len(train_ids) / oc.batch_size)
    accum = oc.accum_steps or n_batches
    steps_per_epoch = math.ceil(n_batches / accum)
    in_chans = model.backbone.config.in_chans
    epoch_losses, step_losses = [], []
    step = 0
    for epoch in range(cfg.epochs):
        batches = epoch_batches(train_ids, oc.batch_size, seed, epoch)
        losses = []
        for g0 in range(0, len(batches), accum):
            group = batches[g0: g0 + accum]
            opt.lr = cosine_warmup_lr(step, steps_per_epoch, oc)
            opt.zero_grad()
            group_loss = 0.0
            for ids in group:
                if audit is not None:
                    audit.check(ids, "pretrain")
                batch = collate([records[i] for i in ids], in_chans, with_targets=False)
                loss, _ = mim_loss(model, cfg, batch, sample_masks(cfg, batch, seed, epoch))
                if not torch.isfinite(loss):
                    raise NonFinite(f"pre-training loss became {loss.item()} at epoch {epoch}")
                (loss / len(group)).backward()
                losses.append(loss.item())
                group_loss += loss.item() / len(group)
            opt.step()
            step_losses.append(group_loss)
            step += 1
        epoch_losses.append(float(np.mean(losses)))
        if log:
            log(f"pretrain {cfg.method} epoch {epoch + 1}/{cfg.epochs} loss {epoch_losses[-1]:.6f}")
    manifest = backbone_manifest(model.backbone.config, cfg.method, pretrain_config=to_dict(cfg),
                                 seed=seed, epoch_losses=epoch_losses, train_images=len(train_ids))
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, checkpoint_tensors(model), manifest)
    return PretrainResult(model, epoch_losses, step_losses, checkpoint_path, manifest,
                          time.perf_counter() - t0)
