"""Cascade box heads: per-stage assignment at rising IoU thresholds and box refinement."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigError
from .boxes import assign_targets, decode_deltas, encode_deltas, sample_targets
from .roi_align import multilevel_roi_align

DEFAULT_STAGE_STDS = (
    (0.1, 0.1, 0.2, 0.2),
    (0.05, 0.05, 0.1, 0.1),
    (0.033, 0.033, 0.067, 0.067),
)


@dataclass(frozen=True)
class CascadeConfig:
    stage_ious: tuple = (0.5, 0.6, 0.7)
    stage_weights: tuple = (1.0, 0.5, 0.25)
    stage_stds: tuple = DEFAULT_STAGE_STDS
    num_samples: int = 512
    pos_fraction: float = 0.25
    roi_size: int = 7
    fc_dim: int = 1024

    def __post_init__(self):
        n = len(self.stage_ious)
        if n < 1:
            raise ConfigError("cascade needs at least one stage")
        if len(self.stage_weights) != n or len(self.stage_stds) != n:
            raise ConfigError("stage_ious, stage_weights and stage_stds must have equal length")
        if any(b <= a for a, b in zip(self.stage_ious, self.stage_ious[1:])):
            raise ConfigError(f"stage IoU thresholds must increase strictly, got {self.stage_ious}")
        if not all(0.0 < u < 1.0 for u in self.stage_ious):
            raise ConfigError("stage IoU thresholds must lie in (0, 1)")


class BoxHead(nn.Module):
    """Two shared fully-connected layers, then a classifier and class-agnostic regressor."""

    def __init__(self, in_channels: int, roi_size: int, fc_dim: int, num_classes: int):
        super().__init__()
        self.fc1 = nn.Linear(in_channels * roi_size * roi_size, fc_dim)
        self.fc2 = nn.Linear(fc_dim, fc_dim)
        self.cls = nn.Linear(fc_dim, num_classes + 1)
        self.reg = nn.Linear(fc_dim, 4)
        nn.init.normal_(self.cls.weight, std=0.01)
        nn.init.normal_(self.reg.weight, std=0.001)
        nn.init.zeros_(self.cls.bias)
        nn.init.zeros_(self.reg.bias)

    def forward(self, pooled: torch.Tensor):
        x = F.relu(self.fc1(pooled.flatten(1)))
        x = F.relu(self.fc2(x))
        return self.cls(x), self.reg(x)


def as_rois(boxes: Sequence[torch.Tensor]) -> torch.Tensor:
    parts = [torch.cat([torch.full((len(b), 1), float(i), dtype=b.dtype, device=b.device), b], dim=1)
             for i, b in enumerate(boxes)]
    return torch.cat(parts) if parts else torch.zeros(0, 5)


@dataclass
class StageSample:
    """Sampled rois of one image for one stage."""
    boxes: torch.Tensor
    labels: torch.Tensor  # num_classes for background
    gt_index: torch.Tensor  # -1 for negatives
    is_gt: torch.Tensor
    num_pos: int


class CascadeHeads(nn.Module):
    def __init__(self, channels: int, strides: Sequence[int], num_classes: int, cfg: CascadeConfig):
        super().__init__()
        self.cfg = cfg
        self.strides = list(strides)
        self.num_classes = num_classes
        self.heads = nn.ModuleList([BoxHead(channels, cfg.roi_size, cfg.fc_dim, num_classes)
                                    for _ in cfg.stage_ious])

    @property
    def num_stages(self) -> int:
        return len(self.heads)

    def pool(self, feats, rois):
        return multilevel_roi_align(feats, self.strides, rois, self.cfg.roi_size)

    def sample(self, proposals: torch.Tensor, gt_boxes: torch.Tensor, gt_labels: torch.Tensor,
               stage: int, generator: torch.Generator) -> StageSample:
        u = self.cfg.stage_ious[stage]
        cand = torch.cat([gt_boxes.to(proposals), proposals])
        is_gt = torch.zeros(len(cand), dtype=torch.bool)
        is_gt[: len(gt_boxes)] = True
        assigned, _ = assign_targets(cand, gt_boxes, u, u, u, rescue=False)
        pos, neg = sample_targets(assigned, self.cfg.num_samples, self.cfg.pos_fraction, generator)
        idx = torch.cat([pos, neg])
        gt_index = torch.as_tensor(assigned)[idx].clamp(min=-1)
        gt_index[len(pos):] = -1
        labels = torch.full((len(idx),), self.num_classes, dtype=torch.long)
        if len(pos):
            labels[: len(pos)] = gt_labels.cpu()[gt_index[: len(pos)]]
        return StageSample(cand[idx], labels, gt_index, is_gt[idx], len(pos))

    def stage_loss(self, stage: int, cls_logits, deltas, samples: Sequence[StageSample], gt_boxes):
        labels = torch.cat([s.labels for s in samples]).to(cls_logits.device)
        n = max(len(labels), 1)
        loss_cls = F.cross_entropy(cls_logits, labels, reduction="sum") / n
        pos_rows, pos_targets, offset = [], [], 0
        for s, g in zip(samples, gt_boxes):
            if s.num_pos:
                pos_rows.append(torch.arange(offset, offset + s.num_pos))
                pos_targets.append(encode_deltas(s.boxes[: s.num_pos], g.to(s.boxes)[s.gt_index[: s.num_pos]],
                                                 self.cfg.stage_stds[stage]))
            offset += len(s.labels)
        if pos_rows:
            rows = torch.cat(pos_rows).to(deltas.device)
            loss_reg = F.smooth_l1_loss(deltas[rows], torch.cat(pos_targets), beta=1.0, reduction="sum") / n
        else:
            loss_reg = deltas.sum() * 0.0
        w = self.cfg.stage_weights[stage]
        return {f"s{stage}_cls": w * loss_cls, f"s{stage}_reg": w * loss_reg}

    def forward_train(self, feats, proposals: list[torch.Tensor], gt_boxes, gt_labels, image_shape,
                      generator: torch.Generator):
        """Returns losses and the final-stage samples (for the mask branch)."""
        losses = {}
        props = [p.detach() for p in proposals]
        samples = []
        for t, head in enumerate(self.heads):
            samples = [self.sample(p, g, l, t, generator) for p, g, l in zip(props, gt_boxes, gt_labels)]
            rois = as_rois([s.boxes for s in samples])
            cls_logits, deltas = head(self.pool(feats, rois))
            losses.update(self.stage_loss(t, cls_logits, deltas, samples, gt_boxes))
            if t + 1 < self.num_stages:
                refined = decode_deltas(rois[:, 1:], deltas.detach(), self.cfg.stage_stds[t], image_shape)
                props, offset = [], 0
                for s in samples:
                    r = refined[offset: offset + len(s.labels)]
                    props.append(r[~s.is_gt.to(r.device)])
                    offset += len(s.labels)
        return losses, samples

    @torch.no_grad()
    def forward_test(self, feats, proposals: list[torch.Tensor], image_shape):
        """Stage-averaged class probabilities (K, C+1), final boxes (K, 4) and per-stage boxes."""
        rois = as_rois(proposals)
        probs = []
        stage_boxes = [rois[:, 1:]]
        for t, head in enumerate(self.heads):
            cls_logits, deltas = head(self.pool(feats, rois))
            probs.append(F.softmax(cls_logits, dim=1))
            boxes = decode_deltas(rois[:, 1:], deltas, self.cfg.stage_stds[t], image_shape)
            stage_boxes.append(boxes)
            rois = torch.cat([rois[:, :1], boxes], dim=1)
        return torch.stack(probs).mean(0), rois, stage_boxes
