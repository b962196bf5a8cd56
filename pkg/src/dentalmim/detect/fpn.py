"""Feature pyramid neck."""

from __future__ import annotations

from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ShapeError


class FPN(nn.Module):
    """Lateral 1x1 projections, nearest-neighbour top-down pathway, 3x3 smoothing.

    ``extra_levels`` coarser maps are appended by stride-2 subsampling of the
    coarsest output (max-pool with kernel 1).
    """

    def __init__(self, in_channels: Sequence[int], out_channels: int = 256, extra_levels: int = 1,
                 top_down: bool = True):
        super().__init__()
        self.in_channels = list(in_channels)
        self.out_channels = out_channels
        self.extra_levels = extra_levels
        self.top_down = top_down
        self.lateral_convs = nn.ModuleList([nn.Conv2d(c, out_channels, 1) for c in in_channels])
        self.fpn_convs = nn.ModuleList([nn.Conv2d(out_channels, out_channels, 3, padding=1)
                                        for _ in in_channels])
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.xavier_uniform_(m.weight)
                nn.init.zeros_(m.bias)

    def forward(self, feats: Sequence[torch.Tensor]) -> list[torch.Tensor]:
        if len(feats) != len(self.in_channels):
            raise ShapeError(f"expected {len(self.in_channels)} levels, got {len(feats)}")
        for f, c in zip(feats, self.in_channels):
            if f.ndim != 4 or f.shape[1] != c:
                raise ShapeError(f"level with shape {tuple(f.shape)} does not have {c} channels")
        laterals = [conv(f) for conv, f in zip(self.lateral_convs, feats)]
        if self.top_down:
            for i in range(len(laterals) - 1, 0, -1):
                laterals[i - 1] = laterals[i - 1] + F.interpolate(
                    laterals[i], size=laterals[i - 1].shape[-2:], mode="nearest")
        outs = [conv(x) for conv, x in zip(self.fpn_convs, laterals)]
        for _ in range(self.extra_levels):
            outs.append(F.max_pool2d(outs[-1], kernel_size=1, stride=2))
        return outs
