from .checkpoint import (TransferReport, backbone_manifest, copy_matching, load_backbone,
                         load_checkpoint, read_manifest, save_checkpoint, tensor_digest)
from .swin import (PRESETS, BackboneConfig, PatchEmbed, PatchMerging, SwinBackbone, SwinBlock,
                   WindowAttention, attach_mask_tokens, attention_mask, build_backbone, preset,
                   window_partition, window_reverse)

__all__ = [
    "PRESETS", "BackboneConfig", "PatchEmbed", "PatchMerging", "SwinBackbone", "SwinBlock",
    "TransferReport", "WindowAttention", "attach_mask_tokens", "attention_mask",
    "backbone_manifest", "build_backbone", "copy_matching", "load_backbone", "load_checkpoint",
    "preset", "read_manifest", "save_checkpoint", "tensor_digest", "window_partition",
    "window_reverse",
]
