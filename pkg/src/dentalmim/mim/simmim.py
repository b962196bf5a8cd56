"""SimMIM: mask tokens inside the encoder, a linear pixel head, L1 on masked pixels."""

from __future__ import annotations

from typing import Optional

import torch
import torch.nn as nn

from ..backbone.swin import SwinBackbone
from ..errors import EmptyMask, ShapeError


class SimMIMHead(nn.Module):
    """One linear projection per stride-s cell, unfolded into an s x s pixel block."""

    def __init__(self, in_dim: int, stride: int = 32, out_chans: int = 1):
        super().__init__()
        self.stride = stride
        self.out_chans = out_chans
        self.proj = nn.Conv2d(in_dim, stride * stride * out_chans, kernel_size=1)
        self.shuffle = nn.PixelShuffle(stride)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        if features.ndim != 4 or features.shape[1] != self.proj.in_channels:
            raise ShapeError(f"expected (B, {self.proj.in_channels}, h, w) features, got {tuple(features.shape)}")
        return self.shuffle(self.proj(features))

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def pixel_mask_from_units(mask: torch.Tensor, unit_px: int) -> torch.Tensor:
    return mask.repeat_interleave(unit_px, 1).repeat_interleave(unit_px, 2)


def simmim_loss(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor, unit_px: int,
                valid: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean absolute error over pixels under masked units.

    ``mask`` is (B, gh, gw) over units; ``valid`` optionally (B, H, W) marks
    non-padded pixels, which restricts numerator and denominator alike.
    """
    if pred.shape != target.shape:
        raise ShapeError(f"pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    B, C, H, W = pred.shape
    m = pixel_mask_from_units(mask, unit_px)
    if m.shape != (B, H, W):
        raise ShapeError(f"unit mask {tuple(mask.shape)} x {unit_px}px does not cover {H}x{W}")
    m = m.to(pred.dtype)
    if valid is not None:
        m = m * valid.to(pred.dtype)
    denom = m.sum() * C
    if denom.item() == 0:
        raise EmptyMask("no masked pixels to reconstruct")
    return ((pred - target).abs() * m.unsqueeze(1)).sum() / denom


class SimMIM(nn.Module):
    def __init__(self, backbone: SwinBackbone, unit_px: int = 16, out_chans: Optional[int] = None):
        super().__init__()
        cfg = backbone.config
        if unit_px % cfg.patch_size:
            raise ShapeError(f"mask unit {unit_px}px is not a multiple of patch size {cfg.patch_size}")
        self.backbone = backbone
        self.unit_px = unit_px
        self.stride = cfg.stage_strides[-1]
        self.head = SimMIMHead(cfg.stage_channels[-1], self.stride, out_chans or cfg.in_chans)

    def forward(self, images: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """``images`` (B, C, H, W) padded to the stride; ``mask`` (B, H/unit, W/unit)."""
        feats = self.backbone.forward_features(images, mask)
        return self.head(feats[-1])

    def loss(self, images, target, mask, valid=None):
        pred = self(images, mask)
        return simmim_loss(pred, target, mask, self.unit_px, valid), pred
