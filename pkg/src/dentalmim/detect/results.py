"""COCO results-format serialization of detections."""

from __future__ import annotations

import json
import os

from ..dataset.masks import encode
from ..fdi import coco_category_id
from .model import Detection


def detection_to_coco(image_id, det: Detection) -> dict:
    x1, y1, x2, y2 = det.box
    out = {"image_id": image_id, "category_id": coco_category_id(det.label),
           "bbox": [round(x1, 4), round(y1, 4), round(x2 - x1, 4), round(y2 - y1, 4)],
           "score": round(det.score, 6)}
    if det.mask is not None:
        out["segmentation"] = encode(det.mask)
    return out


def to_coco_results(detections: dict) -> list[dict]:
    """``detections`` maps image_id to a list of :class:`Detection`."""
    rows = []
    for image_id in sorted(detections, key=str):
        rows.extend(detection_to_coco(image_id, d) for d in detections[image_id])
    return rows


def save_results(path: os.PathLike, detections: dict) -> None:
    with open(path, "w") as fh:
        json.dump(to_coco_results(detections), fh, sort_keys=True)
