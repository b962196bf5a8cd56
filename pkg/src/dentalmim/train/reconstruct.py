"""Reconstructions from a pre-trained MIM model for the three-panel figure."""

from __future__ import annotations

import os
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from ..backbone import load_checkpoint
from ..dataset import AnnotationRecord, record_rng
from ..mim import SimMIM, random_mask, stack_masks, stack_samples, uniform_sample, unpatchify
from .config import PretrainConfig, from_dict
from .data import collate
from .pretrain import build_mim_model


def load_mim_model(path: os.PathLike) -> tuple[nn.Module, PretrainConfig]:
    tensors, manifest = load_checkpoint(path)
    cfg = from_dict(PretrainConfig, manifest["pretrain_config"])
    model = build_mim_model(cfg)
    model.load_state_dict(tensors)
    return model, cfg


@torch.no_grad()
def reconstruct(model: nn.Module, cfg: PretrainConfig, record: AnnotationRecord,
                seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(original, masked pixel map, reconstruction) on the padded canvas, gray-scale in [0, 1]."""
    model.eval()
    batch = collate([record], model.backbone.config.in_chans, with_targets=False)
    Hp, Wp = batch.raw.shape[-2:]
    gh, gw = Hp // cfg.unit_px, Wp // cfg.unit_px
    rng = record_rng(seed, record.image_id, 0)
    if isinstance(model, SimMIM):
        spec = random_mask(gh, gw, cfg.mask_ratio, rng, cfg.unit_px)
        pred = model(batch.images, stack_masks([spec]))
        masked_px = spec.pixel_mask()
    else:
        sample = uniform_sample(gh, gw, cfg.secondary_ratio, rng, cfg.unit_px)
        kept, sec = stack_samples([sample])
        patches = model(batch.images, kept, sec)
        pred = unpatchify(patches, gh, gw, cfg.unit_px, model.out_chans)
        masked_px = sample.pixel_mask()
    original = batch.raw[0].mean(0).numpy()
    recon = pred[0].mean(0).clamp(0, 1).numpy()
    return original, masked_px, recon


def fresh_model(cfg: PretrainConfig, seed: Optional[int] = 0) -> nn.Module:
    torch.manual_seed(seed or 0)
    return build_mim_model(cfg)
