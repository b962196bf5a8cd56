"""Box geometry: IoU, greedy NMS, delta coding, target assignment and sampling.

Boxes are (x1, y1, x2, y2) in input pixels with width ``x2 - x1``.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
import torch

NEGATIVE = -1
IGNORE = -2

# largest log-scale change a decoded delta may apply
MAX_LOG_RATIO = math.log(1000.0 / 16)


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def box_iou(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Pairwise IoU, (N, 4) x (M, 4) -> (N, M)."""
    area_a = (a[:, 2] - a[:, 0]).clamp(min=0) * (a[:, 3] - a[:, 1]).clamp(min=0)
    area_b = (b[:, 2] - b[:, 0]).clamp(min=0) * (b[:, 3] - b[:, 1]).clamp(min=0)
    lt = torch.maximum(a[:, None, :2], b[None, :, :2])
    rb = torch.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = (rb - lt).clamp(min=0)
    inter = wh[..., 0] * wh[..., 1]
    union = area_a[:, None] + area_b[None, :] - inter
    return torch.where(union > 0, inter / union.clamp(min=1e-12), torch.zeros_like(inter))


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = np.count_nonzero(a | b)
    return np.count_nonzero(a & b) / union if union else 0.0


def nms(boxes: torch.Tensor, scores: torch.Tensor, iou_threshold: float) -> torch.Tensor:
    """Greedy suppression in descending score order; equal scores keep the lower index first.

    A box is suppressed when its IoU with a kept box exceeds the threshold.
    """
    n = boxes.shape[0]
    if n == 0:
        return torch.zeros(0, dtype=torch.long)
    order = np.argsort(-scores.detach().cpu().numpy(), kind="stable")
    ious = box_iou(boxes.detach(), boxes.detach()).cpu().numpy()
    suppressed = np.zeros(n, dtype=bool)
    keep = []
    for i in order:
        if suppressed[i]:
            continue
        keep.append(i)
        suppressed |= ious[i] > iou_threshold
    return torch.as_tensor(np.asarray(keep, dtype=np.int64))


def batched_nms(boxes: torch.Tensor, scores: torch.Tensor, groups: torch.Tensor,
                iou_threshold: float) -> torch.Tensor:
    """NMS independently within each group id; result ordered by descending score."""
    if boxes.shape[0] == 0:
        return torch.zeros(0, dtype=torch.long)
    keep = []
    for g in torch.unique(groups).tolist():
        idx = torch.nonzero(groups == g).flatten()
        keep.append(idx[nms(boxes[idx], scores[idx], iou_threshold)])
    keep = torch.cat(keep)
    order = np.argsort(-scores[keep].detach().cpu().numpy(), kind="stable")
    return keep[torch.as_tensor(order)]


def encode_deltas(boxes: torch.Tensor, targets: torch.Tensor,
                  stds: Sequence[float] = (1.0, 1.0, 1.0, 1.0)) -> torch.Tensor:
    pw = boxes[:, 2] - boxes[:, 0]
    ph = boxes[:, 3] - boxes[:, 1]
    px = boxes[:, 0] + 0.5 * pw
    py = boxes[:, 1] + 0.5 * ph
    gw = targets[:, 2] - targets[:, 0]
    gh = targets[:, 3] - targets[:, 1]
    gx = targets[:, 0] + 0.5 * gw
    gy = targets[:, 1] + 0.5 * gh
    d = torch.stack([(gx - px) / pw, (gy - py) / ph, torch.log(gw / pw), torch.log(gh / ph)], dim=1)
    return d / d.new_tensor(stds)


def decode_deltas(boxes: torch.Tensor, deltas: torch.Tensor,
                  stds: Sequence[float] = (1.0, 1.0, 1.0, 1.0), max_shape=None) -> torch.Tensor:
    """Apply (dx, dy, dw, dh) deltas; zero deltas return the input boxes bit-for-bit."""
    d = deltas * deltas.new_tensor(stds)
    dx, dy = d[:, 0], d[:, 1]
    dw = d[:, 2].clamp(-MAX_LOG_RATIO, MAX_LOG_RATIO)
    dh = d[:, 3].clamp(-MAX_LOG_RATIO, MAX_LOG_RATIO)
    pw = boxes[:, 2] - boxes[:, 0]
    ph = boxes[:, 3] - boxes[:, 1]
    # written as edge offsets so that zero deltas are an exact identity
    shrink_w = 0.5 * (pw - pw * torch.exp(dw))
    shrink_h = 0.5 * (ph - ph * torch.exp(dh))
    out = torch.stack([
        boxes[:, 0] + dx * pw + shrink_w,
        boxes[:, 1] + dy * ph + shrink_h,
        boxes[:, 2] + dx * pw - shrink_w,
        boxes[:, 3] + dy * ph - shrink_h,
    ], dim=1)
    if max_shape is not None:
        out = clip_boxes(out, max_shape)
    return out


def clip_boxes(boxes: torch.Tensor, shape) -> torch.Tensor:
    h, w = shape
    return torch.stack([boxes[:, 0].clamp(0, w), boxes[:, 1].clamp(0, h),
                        boxes[:, 2].clamp(0, w), boxes[:, 3].clamp(0, h)], dim=1)


def assign_targets(candidates: torch.Tensor, gt_boxes: torch.Tensor, pos_thr: float, neg_thr: float,
                   min_pos_iou: float = 0.0, rescue: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Max-IoU assignment.

    Returns ``(assigned, max_iou)``: ``assigned[i]`` is the matched gt index
    for positives, :data:`NEGATIVE`, or :data:`IGNORE`.  After thresholding,
    every gt claims its single best candidate (lowest index on ties) when
    that IoU reaches ``min_pos_iou``; later gts win contested candidates.
    """
    if pos_thr < neg_thr:
        raise ValueError("pos_thr must be >= neg_thr")
    n, g = candidates.shape[0], gt_boxes.shape[0]
    if g == 0:
        return np.full(n, NEGATIVE, dtype=np.int64), np.zeros(n)
    ious = box_iou(candidates.detach(), gt_boxes.detach()).cpu().double().numpy()
    if n == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    max_iou = ious.max(axis=1)
    argmax = ious.argmax(axis=1)
    assigned = np.full(n, IGNORE, dtype=np.int64)
    assigned[max_iou < neg_thr] = NEGATIVE
    pos = max_iou >= pos_thr
    assigned[pos] = argmax[pos]
    if rescue:
        best = ious.argmax(axis=0)
        for j in range(g):
            if ious[best[j], j] >= min_pos_iou:
                assigned[best[j]] = j
    return assigned, max_iou


def sample_targets(assigned: np.ndarray, num: int, pos_fraction: float,
                   generator: torch.Generator) -> tuple[torch.Tensor, torch.Tensor]:
    """Random positive / negative subsample; returns index tensors (pos, neg)."""
    pos = torch.as_tensor(np.flatnonzero(assigned >= 0))
    neg = torch.as_tensor(np.flatnonzero(assigned == NEGATIVE))
    n_pos = min(int(num * pos_fraction), pos.numel())
    if pos.numel() > n_pos:
        pos = pos[torch.randperm(pos.numel(), generator=generator)[:n_pos]]
    n_neg = min(num - pos.numel(), neg.numel())
    if neg.numel() > n_neg:
        neg = neg[torch.randperm(neg.numel(), generator=generator)[:n_neg]]
    return pos.long(), neg.long()
