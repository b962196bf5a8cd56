"""Instance-mask encoding helpers built on pycocotools RLE."""

from __future__ import annotations

import numpy as np
from pycocotools import mask as mask_utils

from ..errors import ParseError


def encode(mask: np.ndarray) -> dict:
    """Compressed COCO RLE for a 2-D boolean mask; counts stored as str."""
    mask = np.asfortranarray(np.asarray(mask, dtype=np.uint8))
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    rle = mask_utils.encode(mask)
    return {"size": [int(s) for s in rle["size"]], "counts": rle["counts"].decode("ascii")}


def decode(rle: dict) -> np.ndarray:
    counts = rle["counts"]
    if isinstance(counts, str):
        counts = counts.encode("ascii")
    return mask_utils.decode({"size": list(rle["size"]), "counts": counts}).astype(bool)


def from_segmentation(segmentation, height: int, width: int) -> dict:
    """Normalize a COCO ``segmentation`` field (polygons, RLE or compressed RLE)."""
    if isinstance(segmentation, list):
        if not segmentation or not all(isinstance(p, list) and len(p) >= 6 for p in segmentation):
            raise ParseError("polygon segmentation needs at least one ring of >= 3 vertices")
        rles = mask_utils.frPyObjects(segmentation, height, width)
        rle = mask_utils.merge(rles)
    elif isinstance(segmentation, dict) and "counts" in segmentation and "size" in segmentation:
        if isinstance(segmentation["counts"], list):
            rle = mask_utils.frPyObjects(segmentation, *segmentation["size"])
        else:
            counts = segmentation["counts"]
            rle = {"size": list(segmentation["size"]),
                   "counts": counts.encode("ascii") if isinstance(counts, str) else counts}
    else:
        raise ParseError(f"unsupported segmentation of type {type(segmentation).__name__}")
    counts = rle["counts"]
    return {"size": [int(s) for s in rle["size"]],
            "counts": counts.decode("ascii") if isinstance(counts, bytes) else counts}


def tight_bbox(mask: np.ndarray) -> tuple[float, float, float, float] | None:
    """Pixel-aligned (x, y, w, h) enclosing every set pixel, or None if empty."""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return None
    x0, x1 = int(cols[0]), int(cols[-1]) + 1
    y0, y1 = int(rows[0]), int(rows[-1]) + 1
    return (float(x0), float(y0), float(x1 - x0), float(y1 - y0))


def area(rle: dict) -> float:
    counts = rle["counts"]
    if isinstance(counts, str):
        counts = counts.encode("ascii")
    return float(mask_utils.area({"size": list(rle["size"]), "counts": counts}))
