"""Greedy score-ordered matching of detections to ground truth."""

from __future__ import annotations

import numpy as np


def match_detections(ious: np.ndarray, iou_threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Match rows (detections, already in descending score order) to columns (gts).

    Each detection takes the unmatched gt of highest IoU, provided that IoU
    reaches the threshold; ties go to the lower gt index.  Returns the TP
    flags and the matched gt index per detection (-1 when unmatched).
    """
    ious = np.asarray(ious, dtype=np.float64)
    n_det = ious.shape[0]
    n_gt = ious.shape[1] if ious.ndim == 2 else 0
    tp = np.zeros(n_det, dtype=bool)
    matched = np.full(n_det, -1, dtype=np.int64)
    if n_det == 0 or n_gt == 0:
        return tp, matched
    taken = np.zeros(n_gt, dtype=bool)
    for d in range(n_det):
        row = np.where(taken, -1.0, ious[d])
        g = int(np.argmax(row))
        if row[g] >= iou_threshold and not taken[g]:
            taken[g] = True
            tp[d] = True
            matched[d] = g
    return tp, matched
