"""Instance-mask branch: conv stack, 2x upsampling, per-class 28x28 logits, paste into the image."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .roi_align import roi_align


class MaskHead(nn.Module):
    def __init__(self, in_channels: int, num_classes: int, channels: int = 256, num_convs: int = 4):
        super().__init__()
        layers = []
        c = in_channels
        for _ in range(num_convs):
            layers += [nn.Conv2d(c, channels, 3, padding=1), nn.ReLU(inplace=True)]
            c = channels
        self.convs = nn.Sequential(*layers)
        self.upsample = nn.ConvTranspose2d(c, channels, 2, stride=2)
        self.logits = nn.Conv2d(channels, num_classes, 1)
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
                nn.init.zeros_(m.bias)

    def forward(self, pooled: torch.Tensor) -> torch.Tensor:
        return self.logits(F.relu(self.upsample(self.convs(pooled))))


def mask_targets(gt_masks: torch.Tensor, boxes: torch.Tensor, gt_index: torch.Tensor, size: int) -> torch.Tensor:
    """(K, size, size) binary targets cropped from the assigned gt masks."""
    if len(boxes) == 0:
        return gt_masks.new_zeros(0, size, size, dtype=torch.float32)
    m = gt_masks.to(torch.float32).unsqueeze(1)
    rois = torch.cat([gt_index.to(boxes).view(-1, 1), boxes], dim=1)
    return (roi_align(m, rois, size, 1.0, 2, True).squeeze(1) >= 0.5).to(torch.float32)


def mask_loss(logits: torch.Tensor, labels: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    if len(labels) == 0:
        return logits.sum() * 0.0
    sel = logits[torch.arange(len(labels), device=logits.device), labels.to(logits.device)]
    return F.binary_cross_entropy_with_logits(sel, targets)


def paste_masks(probs: torch.Tensor, boxes: torch.Tensor, height: int, width: int,
                threshold: float = 0.5) -> torch.Tensor:
    """Resample (K, m, m) probabilities into their boxes on an HxW canvas; returns bool (K, H, W).

    A pixel is inside the pasted map when its centre lies within the box;
    outside the box the map reads as zero.
    """
    K = probs.shape[0]
    if K == 0:
        return torch.zeros(0, height, width, dtype=torch.bool)
    boxes = boxes.to(torch.float32)
    x1, y1, x2, y2 = boxes.unbind(1)
    xs = torch.arange(width, dtype=torch.float32) + 0.5
    ys = torch.arange(height, dtype=torch.float32) + 0.5
    gx = (xs[None, :] - x1[:, None]) / (x2 - x1).clamp(min=1e-6)[:, None] * 2 - 1
    gy = (ys[None, :] - y1[:, None]) / (y2 - y1).clamp(min=1e-6)[:, None] * 2 - 1
    grid = torch.stack([gx[:, None, :].expand(K, height, width), gy[:, :, None].expand(K, height, width)], dim=-1)
    out = F.grid_sample(probs.to(torch.float32).unsqueeze(1), grid, mode="bilinear",
                        padding_mode="zeros", align_corners=False)
    return out.squeeze(1) >= threshold
