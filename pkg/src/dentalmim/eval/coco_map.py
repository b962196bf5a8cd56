"""COCO-style AP over boxes or instance masks, per class and aggregate."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from ..dataset import DatasetIndex
from ..errors import CategoryMismatch
from ..fdi import NUM_CLASSES, coco_categories, index_to_label
from .ap import average_precision, score_order
from .matching import match_detections

IOU_THRESHOLDS = tuple(np.round(np.linspace(0.5, 0.95, 10), 2).tolist())
MAX_DETS = 100


def box_iou_xyxy(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix = np.clip(np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]), 0, None)
    iy = np.clip(np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]), 0, None)
    inter = ix * iy
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def mask_iou_matrix(a: Sequence[np.ndarray], b: Sequence[np.ndarray]) -> np.ndarray:
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    fa = np.stack([np.asarray(m, dtype=bool).ravel() for m in a]).astype(np.float32)
    fb = np.stack([np.asarray(m, dtype=bool).ravel() for m in b]).astype(np.float32)
    inter = fa @ fb.T
    union = fa.sum(1)[:, None] + fb.sum(1)[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0).astype(np.float64)


@dataclass
class GroundTruth:
    boxes: np.ndarray  # (n, 4) xyxy
    labels: np.ndarray  # (n,)
    masks: list


@dataclass
class MapResult:
    kind: str
    per_class: np.ndarray  # (num_classes, num_thresholds), nan where undefined
    thresholds: tuple

    @property
    def ap(self) -> Optional[float]:
        vals = self.per_class[~np.isnan(self.per_class)]
        return float(vals.mean()) if vals.size else None

    def ap_at(self, thr: float) -> Optional[float]:
        col = self.per_class[:, self.thresholds.index(round(thr, 2))]
        col = col[~np.isnan(col)]
        return float(col.mean()) if col.size else None

    @property
    def ap50(self) -> Optional[float]:
        return self.ap_at(0.5)

    def class_ap(self) -> dict:
        out = {}
        for k in range(self.per_class.shape[0]):
            row = self.per_class[k]
            if not np.isnan(row).all():
                out[index_to_label(k).name] = float(np.nanmean(row))
        return out


def ground_truth_from_index(index: DatasetIndex, with_masks: bool = True) -> dict:
    if index.categories and [c["name"] for c in index.categories] != [c["name"] for c in coco_categories()]:
        raise CategoryMismatch("ground truth category table differs from the canonical 35 classes")
    out = {}
    for rec in index.records:
        boxes = np.array([[x, y, x + w, y + h] for x, y, w, h in (i.bbox for i in rec.instances)],
                         dtype=np.float64).reshape(-1, 4)
        labels = np.array([i.label.index for i in rec.instances], dtype=np.int64)
        masks = [i.mask() for i in rec.instances] if with_masks else []
        out[rec.image_id] = GroundTruth(boxes, labels, masks)
    return out


def coco_map(detections: Mapping, ground_truth: Mapping, kind: str = "box",
             thresholds: Sequence[float] = IOU_THRESHOLDS, max_dets: int = MAX_DETS,
             num_classes: int = NUM_CLASSES) -> MapResult:
    """AP per (class, IoU threshold) over all images of ``ground_truth``.

    ``detections`` maps image id to objects with ``box`` (xyxy), ``label``,
    ``score`` and, for ``kind='mask'``, ``mask``.  Images missing from it
    have no detections.  Within an image and class, detections are ranked
    by score and truncated to ``max_dets``; across images they are merged in
    image-id order before the global score sort.
    """
    if kind not in ("box", "mask"):
        raise ValueError(f"kind must be 'box' or 'mask', got {kind!r}")
    unknown = set(detections) - set(ground_truth)
    if unknown:
        raise CategoryMismatch(f"detections reference unknown image ids {sorted(unknown, key=str)[:5]}")
    thresholds = tuple(round(float(t), 2) for t in thresholds)
    T = len(thresholds)
    per_class = np.full((num_classes, T), np.nan)
    image_ids = sorted(ground_truth, key=lambda i: (str(type(i)), i))
    flags = [[[] for _ in range(T)] for _ in range(num_classes)]
    scores = [[] for _ in range(num_classes)]
    n_gt = np.zeros(num_classes, dtype=np.int64)
    for img in image_ids:
        gt = ground_truth[img]
        dets = list(detections.get(img, []))
        for d in dets:
            if not 0 <= int(d.label) < num_classes:
                raise CategoryMismatch(f"detection label {d.label} outside 0..{num_classes - 1}")
        for k in set(gt.labels.tolist()) | {int(d.label) for d in dets}:
            g_idx = np.flatnonzero(gt.labels == k)
            n_gt[k] += len(g_idx)
            cls_dets = [d for d in dets if int(d.label) == k]
            if not cls_dets:
                continue
            order = score_order([d.score for d in cls_dets])[:max_dets]
            cls_dets = [cls_dets[o] for o in order]
            if kind == "box":
                ious = box_iou_xyxy(np.array([d.box for d in cls_dets]), gt.boxes[g_idx])
            else:
                ious = mask_iou_matrix([d.mask for d in cls_dets], [gt.masks[g] for g in g_idx])
            scores[k].extend(float(d.score) for d in cls_dets)
            for t, thr in enumerate(thresholds):
                tp, _ = match_detections(ious, thr)
                flags[k][t].extend(tp.tolist())
    for k in range(num_classes):
        if n_gt[k] == 0:
            continue
        for t in range(T):
            per_class[k, t] = average_precision(np.array(flags[k][t], dtype=bool),
                                                np.array(scores[k]), int(n_gt[k]))
    return MapResult(kind, per_class, thresholds)


@dataclass
class DetectionMetrics:
    box: MapResult
    mask: Optional[MapResult]

    def summary(self) -> dict:
        return {"AP_box": self.box.ap, "AP50_box": self.box.ap50,
                "AP_mask": None if self.mask is None else self.mask.ap,
                "AP50_mask": None if self.mask is None else self.mask.ap50}


def evaluate(detections: Mapping, index: DatasetIndex, with_masks: bool = True) -> DetectionMetrics:
    gt = ground_truth_from_index(index, with_masks)
    box = coco_map(detections, gt, "box")
    mask = coco_map(detections, gt, "mask") if with_masks else None
    return DetectionMetrics(box, mask)
