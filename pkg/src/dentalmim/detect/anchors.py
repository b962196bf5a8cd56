"""Per-level anchor grids."""

from __future__ import annotations

import math
from typing import Sequence

import torch


def base_anchors(side: float, ratios: Sequence[float]) -> torch.Tensor:
    """Zero-centred (A, 4) anchors; ratio is height / width at constant area side**2."""
    out = []
    for r in ratios:
        w = side / math.sqrt(r)
        h = side * math.sqrt(r)
        out.append([-0.5 * w, -0.5 * h, 0.5 * w, 0.5 * h])
    return torch.tensor(out, dtype=torch.float32)


def generate_anchors(level_sizes: Sequence[tuple[int, int]], strides: Sequence[int],
                     scales: Sequence[float] = (8.0,), ratios: Sequence[float] = (0.5, 1.0, 2.0),
                     clip_to: tuple[int, int] | None = None) -> list[torch.Tensor]:
    """One anchor per (cell, ratio, scale), cell-centred, side ``scale * stride``.

    Each level's tensor is (h * w * A, 4) ordered row-major over cells with
    the A = |ratios| * |scales| shapes innermost, matching a (B, A * 4, h, w)
    regression map permuted to (B, h, w, A, 4).
    """
    out = []
    for (h, w), stride in zip(level_sizes, strides):
        shapes = torch.cat([base_anchors(s * stride, ratios) for s in scales])
        ys = (torch.arange(h, dtype=torch.float32) + 0.5) * stride
        xs = (torch.arange(w, dtype=torch.float32) + 0.5) * stride
        cy, cx = torch.meshgrid(ys, xs, indexing="ij")
        centers = torch.stack([cx, cy, cx, cy], dim=-1).reshape(-1, 1, 4)
        anchors = (centers + shapes.view(1, -1, 4)).reshape(-1, 4)
        if clip_to is not None:
            H, W = clip_to
            anchors = torch.stack([anchors[:, 0].clamp(0, W), anchors[:, 1].clamp(0, H),
                                   anchors[:, 2].clamp(0, W), anchors[:, 3].clamp(0, H)], dim=1)
        out.append(anchors)
    return out


def anchors_per_cell(scales: Sequence[float], ratios: Sequence[float]) -> int:
    return len(scales) * len(ratios)
