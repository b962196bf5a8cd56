"""Interpolated average precision."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

RECALL_POINTS = np.linspace(0.0, 1.0, 101)


def score_order(scores: Sequence[float]) -> np.ndarray:
    """Descending-score permutation; equal scores keep their input order."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="mergesort")


def precision_recall(tp: np.ndarray, n_gt: int) -> tuple[np.ndarray, np.ndarray]:
    tp = np.asarray(tp, dtype=bool)
    tps = np.cumsum(tp)
    fps = np.cumsum(~tp)
    recall = tps / n_gt
    precision = tps / np.maximum(tps + fps, np.finfo(np.float64).eps)
    return precision, recall


def average_precision(tp: Sequence[bool], scores: Optional[Sequence[float]], n_gt: int) -> Optional[float]:
    """101-point interpolated AP of detections flagged TP/FP.

    ``scores`` orders the flags (descending, stable); pass None when the
    flags are already in score order.  Returns None when there is no ground
    truth, so that the class drops out of any mean.
    """
    if n_gt < 0:
        raise ValueError("n_gt must be >= 0")
    if n_gt == 0:
        return None
    tp = np.asarray(tp, dtype=bool)
    if scores is not None:
        tp = tp[score_order(scores)]
    if tp.size == 0:
        return 0.0
    precision, recall = precision_recall(tp, n_gt)
    # monotone envelope from the right
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(sampled.mean())
