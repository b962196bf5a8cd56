"""COCO-style AP for boxes and masks, and result-table reports."""

from .ap import average_precision, precision_recall, score_order
from .coco_map import (IOU_THRESHOLDS, DetectionMetrics, GroundTruth, MapResult, coco_map, evaluate,
                       ground_truth_from_index)
from .matching import match_detections
from .report import (EMPTY_CELL, EvalReport, ablation_csv, ablation_report, cross_val_report, init_table,
                     init_table_csv, render_init_table)

__all__ = [
    "average_precision", "precision_recall", "score_order", "IOU_THRESHOLDS", "DetectionMetrics",
    "GroundTruth", "MapResult", "coco_map", "evaluate", "ground_truth_from_index", "match_detections",
    "EMPTY_CELL", "EvalReport", "ablation_csv", "ablation_report", "cross_val_report", "init_table",
    "init_table_csv", "render_init_table",
]
