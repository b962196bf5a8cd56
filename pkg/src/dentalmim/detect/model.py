"""Cascade Mask R-CNN with FPN on the Swin backbone."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from ..backbone.swin import SwinBackbone
from ..errors import ConfigError, ShapeError
from ..fdi import NUM_CLASSES
from .boxes import batched_nms
from .cascade import CascadeConfig, CascadeHeads, as_rois
from .fpn import FPN
from .mask_head import MaskHead, mask_loss, mask_targets, paste_masks
from .roi_align import multilevel_roi_align as multilevel_pool
from .rpn import RPN, RPNConfig


@dataclass(frozen=True)
class DetectorConfig:
    num_classes: int = NUM_CLASSES
    fpn_channels: int = 256
    fpn_top_down: bool = True
    rpn: RPNConfig = field(default_factory=RPNConfig)
    cascade: CascadeConfig = field(default_factory=CascadeConfig)
    mask_roi_size: int = 14
    mask_channels: int = 256
    mask_convs: int = 4
    score_threshold: float = 0.05
    nms_iou: float = 0.5
    max_detections: int = 100
    class_agnostic_nms: bool = False
    mask_threshold: float = 0.5

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown detector keys: {sorted(unknown)}")
        if "rpn" in d and isinstance(d["rpn"], dict):
            d["rpn"] = RPNConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in d["rpn"].items()})
        if "cascade" in d and isinstance(d["cascade"], dict):
            c = {k: _tuplify(v) for k, v in d["cascade"].items()}
            d["cascade"] = CascadeConfig(**c)
        return cls(**d)


def _tuplify(v):
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


DETECTOR_PRESETS = {
    "default": DetectorConfig(),
    # small heads and anchors sized for ~128 px fixture images
    "toy": DetectorConfig(
        fpn_channels=32,
        rpn=RPNConfig(anchor_scales=(4.0,), pre_nms_top_n=300, test_pre_nms_top_n=300, max_proposals=200),
        cascade=CascadeConfig(num_samples=128, fc_dim=128),
        mask_channels=32, mask_convs=2,
    ),
}


def detector_preset(name: str, **overrides) -> DetectorConfig:
    if name not in DETECTOR_PRESETS:
        raise ConfigError(f"unknown detector preset {name!r}; choose from {sorted(DETECTOR_PRESETS)}")
    return replace(DETECTOR_PRESETS[name], **overrides)


@dataclass
class Detection:
    box: tuple  # x1, y1, x2, y2
    label: int  # category index
    score: float
    mask: Optional[np.ndarray] = None  # bool (H, W)


@dataclass
class Target:
    boxes: torch.Tensor  # (n, 4) xyxy
    labels: torch.Tensor  # (n,) category indices
    masks: torch.Tensor  # (n, H, W) uint8


class CascadeMaskRCNN(nn.Module):
    def __init__(self, backbone: SwinBackbone, cfg: DetectorConfig = DetectorConfig()):
        super().__init__()
        self.cfg = cfg
        self.backbone = backbone
        bcfg = backbone.config
        self.neck = FPN(bcfg.stage_channels, cfg.fpn_channels, extra_levels=1, top_down=cfg.fpn_top_down)
        strides = list(bcfg.stage_strides)
        self.rpn = RPN(cfg.fpn_channels, strides + [strides[-1] * 2], cfg.rpn)
        self.roi_heads = CascadeHeads(cfg.fpn_channels, strides, cfg.num_classes, cfg.cascade)
        self.mask_head = MaskHead(cfg.fpn_channels, cfg.num_classes, cfg.mask_channels, cfg.mask_convs)
        self.roi_strides = strides

    def features(self, images: torch.Tensor) -> list[torch.Tensor]:
        stride = self.backbone.config.stage_strides[-1]
        if images.shape[-1] % stride or images.shape[-2] % stride:
            raise ShapeError(f"input {tuple(images.shape[-2:])} must be padded to a multiple of {stride}")
        return self.neck(self.backbone(images))

    def forward_train(self, images: torch.Tensor, targets: Sequence[Target],
                      generator: torch.Generator) -> dict[str, torch.Tensor]:
        feats = self.features(images)
        shape = tuple(images.shape[-2:])
        scores, deltas = self.rpn.head(feats)
        anchors = self.rpn.anchors(feats, images.device)
        gt_boxes = [t.boxes.to(images) for t in targets]
        gt_labels = [t.labels for t in targets]
        losses = self.rpn.loss(scores, deltas, anchors, gt_boxes, generator)
        proposals = self.rpn.proposals(scores, deltas, anchors, shape, training=True)
        roi_feats = feats[: len(self.roi_strides)]
        stage_losses, samples = self.roi_heads.forward_train(roi_feats, proposals, gt_boxes, gt_labels,
                                                             shape, generator)
        losses.update(stage_losses)
        pos_boxes = [s.boxes[: s.num_pos] for s in samples]
        rois = as_rois(pos_boxes)
        logits = self.mask_head(multilevel_pool(roi_feats, self.roi_strides, rois, self.cfg.mask_roi_size))
        tgts = torch.cat([mask_targets(t.masks, b, s.gt_index[: s.num_pos], logits.shape[-1])
                          for t, b, s in zip(targets, pos_boxes, samples)])
        labels = torch.cat([s.labels[: s.num_pos] for s in samples])
        losses["mask"] = mask_loss(logits, labels, tgts.to(logits))
        return losses

    @torch.no_grad()
    def predict(self, images: torch.Tensor, image_sizes: Sequence[tuple[int, int]],
                with_masks: bool = True) -> list[list[Detection]]:
        """Detections per image; ``image_sizes`` are the unpadded (H, W)."""
        cfg = self.cfg
        feats = self.features(images)
        shape = tuple(images.shape[-2:])
        scores, deltas = self.rpn.head(feats)
        anchors = self.rpn.anchors(feats, images.device)
        proposals = self.rpn.proposals(scores, deltas, anchors, shape, training=False)
        roi_feats = feats[: len(self.roi_strides)]
        probs, rois, _ = self.roi_heads.forward_test(roi_feats, proposals, shape)
        out = []
        for b, (h, w) in enumerate(image_sizes):
            sel = rois[:, 0] == b
            p = probs[sel][:, : cfg.num_classes]
            bx = rois[sel][:, 1:]
            bx = torch.stack([bx[:, 0].clamp(0, w), bx[:, 1].clamp(0, h),
                              bx[:, 2].clamp(0, w), bx[:, 3].clamp(0, h)], dim=1)
            cand, cls = torch.nonzero(p > cfg.score_threshold, as_tuple=True)
            cb, cs = bx[cand], p[cand, cls]
            valid = (cb[:, 2] > cb[:, 0]) & (cb[:, 3] > cb[:, 1])
            cb, cs, cls = cb[valid], cs[valid], cls[valid]
            groups = torch.zeros_like(cls) if cfg.class_agnostic_nms else cls
            keep = batched_nms(cb, cs, groups, cfg.nms_iou)[: cfg.max_detections]
            cb, cs, cls = cb[keep], cs[keep], cls[keep]
            masks = None
            if with_masks and len(keep):
                rr = as_rois([cb])
                rr[:, 0] = b
                logits = self.mask_head(multilevel_pool(roi_feats, self.roi_strides, rr, cfg.mask_roi_size))
                mp = logits[torch.arange(len(cls)), cls].sigmoid()
                masks = paste_masks(mp, cb, h, w, cfg.mask_threshold).numpy()
            dets = []
            for i in range(len(cls)):
                dets.append(Detection(tuple(float(v) for v in cb[i].tolist()), int(cls[i]), float(cs[i]),
                                      None if masks is None else masks[i]))
            out.append(dets)
        return out

