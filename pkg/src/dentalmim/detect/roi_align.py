"""Differentiable RoIAlign (bilinear, fixed samples per bin) and FPN level mapping."""

from __future__ import annotations

from typing import Sequence

import torch

from ..errors import ShapeError


def _axis_samples(lo, extent, bins, sr, size):
    """Sample coordinates along one axis for every roi, with interpolation data.

    Returns (low index, high index, high weight, valid) each of shape (K, bins * sr).
    """
    step = extent / bins
    offs = (torch.arange(bins * sr, dtype=lo.dtype, device=lo.device) + 0.5) / sr  # in bins
    coord = lo[:, None] + offs[None, :] * step[:, None]
    valid = (coord >= -1.0) & (coord <= size)
    coord = coord.clamp(min=0.0)
    low = coord.floor().long()
    at_edge = low >= size - 1
    low = torch.where(at_edge, torch.full_like(low, size - 1), low)
    high = torch.where(at_edge, low, low + 1)
    coord = torch.where(at_edge, low.to(coord.dtype), coord)
    frac = coord - low.to(coord.dtype)
    return low, high, frac, valid


def roi_align(features: torch.Tensor, rois: torch.Tensor, output_size: int | tuple[int, int],
              spatial_scale: float = 1.0, sampling_ratio: int = 2, aligned: bool = True) -> torch.Tensor:
    """Pool (K, C, oh, ow) features for rois given as (K, 5) [batch, x1, y1, x2, y2].

    Every bin averages ``sampling_ratio ** 2`` bilinear samples.  With
    ``aligned`` the pixel-centre convention shifts coordinates by half a
    pixel, as in the usual detection RoIAlign.
    """
    if features.ndim != 4 or rois.ndim != 2 or rois.shape[1] != 5:
        raise ShapeError("expected (B, C, H, W) features and (K, 5) rois")
    oh, ow = (output_size, output_size) if isinstance(output_size, int) else output_size
    B, C, H, W = features.shape
    K = rois.shape[0]
    if K == 0:
        return features.new_zeros(0, C, oh, ow)
    sr = sampling_ratio
    offset = 0.5 if aligned else 0.0
    r = rois.to(features.dtype)
    x1 = r[:, 1] * spatial_scale - offset
    y1 = r[:, 2] * spatial_scale - offset
    rw = r[:, 3] * spatial_scale - offset - x1
    rh = r[:, 4] * spatial_scale - offset - y1
    if not aligned:
        rw = rw.clamp(min=1.0)
        rh = rh.clamp(min=1.0)
    ylo, yhi, ly, yvalid = _axis_samples(y1, rh, oh, sr, H)
    xlo, xhi, lx, xvalid = _axis_samples(x1, rw, ow, sr, W)
    flat = features.flatten(2)  # B, C, H*W
    b = r[:, 0].long().view(K, 1, 1)

    def gather(yi, xi):
        idx = yi[:, :, None] * W + xi[:, None, :]  # K, Sy, Sx
        return flat[b, :, idx]  # K, Sy, Sx, C

    ly = ly[:, :, None, None]
    lx = lx[:, None, :, None]
    val = ((1 - ly) * (1 - lx) * gather(ylo, xlo) + (1 - ly) * lx * gather(ylo, xhi)
           + ly * (1 - lx) * gather(yhi, xlo) + ly * lx * gather(yhi, xhi))
    valid = (yvalid[:, :, None] & xvalid[:, None, :]).unsqueeze(-1)
    val = val * valid.to(val.dtype)
    val = val.view(K, oh, sr, ow, sr, C).mean(dim=(2, 4))
    return val.permute(0, 3, 1, 2).contiguous()


def map_roi_levels(rois: torch.Tensor, num_levels: int, finest_scale: float = 56.0) -> torch.Tensor:
    """Level index per roi: floor(log2(sqrt(area) / finest_scale)), clamped."""
    scale = torch.sqrt((rois[:, 3] - rois[:, 1]).clamp(min=0) * (rois[:, 4] - rois[:, 2]).clamp(min=0))
    lvl = torch.floor(torch.log2(scale / finest_scale + 1e-6))
    return lvl.clamp(0, num_levels - 1).long()


def multilevel_roi_align(feats: Sequence[torch.Tensor], strides: Sequence[int], rois: torch.Tensor,
                         output_size: int, sampling_ratio: int = 2,
                         finest_scale: float = 56.0) -> torch.Tensor:
    C = feats[0].shape[1]
    out = feats[0].new_zeros(rois.shape[0], C, output_size, output_size)
    if rois.shape[0] == 0:
        return out
    levels = map_roi_levels(rois, len(feats), finest_scale)
    for lvl, (f, s) in enumerate(zip(feats, strides)):
        idx = torch.nonzero(levels == lvl).flatten()
        if idx.numel():
            out[idx] = roi_align(f, rois[idx], output_size, 1.0 / s, sampling_ratio)
    return out
