"""Region-proposal network over the FPN levels."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .anchors import generate_anchors
from .boxes import assign_targets, batched_nms, clip_boxes, decode_deltas, encode_deltas, sample_targets


@dataclass(frozen=True)
class RPNConfig:
    anchor_scales: tuple = (8.0,)
    anchor_ratios: tuple = (0.5, 1.0, 2.0)
    pos_iou: float = 0.7
    neg_iou: float = 0.3
    min_pos_iou: float = 0.3
    num_samples: int = 256
    pos_fraction: float = 0.5
    pre_nms_top_n: int = 2000
    test_pre_nms_top_n: int = 1000
    nms_iou: float = 0.7
    max_proposals: int = 1000
    min_box_size: float = 0.0


class RPNHead(nn.Module):
    def __init__(self, channels: int, num_anchors: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)
        self.cls = nn.Conv2d(channels, num_anchors, 1)
        self.reg = nn.Conv2d(channels, num_anchors * 4, 1)
        for m in (self.conv, self.cls, self.reg):
            nn.init.normal_(m.weight, std=0.01)
            nn.init.zeros_(m.bias)

    def forward(self, feats: Sequence[torch.Tensor]):
        """Per level: objectness (B, h*w*A) and deltas (B, h*w*A, 4), cell-major."""
        scores, deltas = [], []
        for f in feats:
            t = F.relu(self.conv(f))
            B, _, h, w = t.shape
            scores.append(self.cls(t).permute(0, 2, 3, 1).reshape(B, -1))
            deltas.append(self.reg(t).view(B, -1, 4, h, w).permute(0, 3, 4, 1, 2).reshape(B, -1, 4))
        return scores, deltas


class RPN(nn.Module):
    def __init__(self, channels: int, strides: Sequence[int], cfg: RPNConfig):
        super().__init__()
        self.cfg = cfg
        self.strides = list(strides)
        self.head = RPNHead(channels, len(cfg.anchor_scales) * len(cfg.anchor_ratios))

    def anchors(self, feats, device=None):
        sizes = [tuple(f.shape[-2:]) for f in feats]
        return [a.to(device) for a in generate_anchors(sizes, self.strides, self.cfg.anchor_scales,
                                                       self.cfg.anchor_ratios)]

    def loss(self, scores, deltas, anchors, gt_boxes: list[torch.Tensor], generator: torch.Generator):
        cfg = self.cfg
        all_anchors = torch.cat(anchors)
        all_scores = torch.cat(scores, dim=1)
        all_deltas = torch.cat(deltas, dim=1)
        cls_terms, reg_terms, n_samples = [], [], 0
        for b, gts in enumerate(gt_boxes):
            assigned, _ = assign_targets(all_anchors, gts, cfg.pos_iou, cfg.neg_iou, cfg.min_pos_iou)
            pos, neg = sample_targets(assigned, cfg.num_samples, cfg.pos_fraction, generator)
            idx = torch.cat([pos, neg]).to(all_scores.device)
            labels = torch.cat([torch.ones(len(pos)), torch.zeros(len(neg))]).to(all_scores)
            cls_terms.append(F.binary_cross_entropy_with_logits(all_scores[b, idx], labels, reduction="sum"))
            if len(pos):
                tgt = encode_deltas(all_anchors[pos], gts[torch.as_tensor(assigned[pos.numpy()])].to(all_anchors))
                reg_terms.append(F.l1_loss(all_deltas[b, pos], tgt, reduction="sum"))
            n_samples += len(idx)
        denom = max(n_samples, 1)
        loss_cls = torch.stack(cls_terms).sum() / denom
        loss_reg = torch.stack(reg_terms).sum() / denom if reg_terms else all_deltas.sum() * 0.0
        return {"rpn_cls": loss_cls, "rpn_reg": loss_reg}

    @torch.no_grad()
    def proposals(self, scores, deltas, anchors, image_shape: tuple[int, int], training: bool):
        """Per-image proposal boxes (K, 4): per-level top-k, decode, clip, per-level NMS."""
        cfg = self.cfg
        top_n = cfg.pre_nms_top_n if training else cfg.test_pre_nms_top_n
        B = scores[0].shape[0]
        out = []
        for b in range(B):
            boxes, objs, levels = [], [], []
            for lvl, (s, d, a) in enumerate(zip(scores, deltas, anchors)):
                sb = s[b].detach().sigmoid()
                k = min(top_n, sb.numel())
                sb, order = torch.sort(sb, descending=True, stable=True)
                sb, order = sb[:k], order[:k]
                bx = decode_deltas(a[order], d[b, order].detach(), max_shape=image_shape)
                boxes.append(bx)
                objs.append(sb)
                levels.append(torch.full((k,), lvl, dtype=torch.long))
            boxes, objs, levels = torch.cat(boxes), torch.cat(objs), torch.cat(levels)
            wh = boxes[:, 2:] - boxes[:, :2]
            ok = (wh[:, 0] > cfg.min_box_size) & (wh[:, 1] > cfg.min_box_size)
            boxes, objs, levels = boxes[ok], objs[ok], levels[ok]
            keep = batched_nms(boxes, objs, levels, cfg.nms_iou)[: cfg.max_proposals]
            out.append(clip_boxes(boxes[keep], image_shape))
        return out
