"""Two-stage cascade detector with FPN, RPN, box cascade and mask branch."""

from .anchors import generate_anchors
from .boxes import (IGNORE, NEGATIVE, assign_targets, batched_nms, box_iou, clip_boxes, decode_deltas,
                    encode_deltas, iou, mask_iou, nms, sample_targets)
from .cascade import CascadeConfig, CascadeHeads
from .fpn import FPN
from .mask_head import MaskHead, paste_masks
from .model import CascadeMaskRCNN, Detection, DetectorConfig, Target, detector_preset
from .results import save_results, to_coco_results
from .roi_align import map_roi_levels, multilevel_roi_align, roi_align
from .rpn import RPN, RPNConfig

__all__ = [
    "IGNORE", "NEGATIVE", "assign_targets", "batched_nms", "box_iou", "clip_boxes", "decode_deltas",
    "encode_deltas", "iou", "mask_iou", "nms", "sample_targets", "generate_anchors", "CascadeConfig",
    "CascadeHeads", "FPN", "MaskHead", "paste_masks", "CascadeMaskRCNN", "Detection", "DetectorConfig",
    "Target", "detector_preset", "save_results", "to_coco_results", "map_roi_levels",
    "multilevel_roi_align", "roi_align", "RPN", "RPNConfig",
]
