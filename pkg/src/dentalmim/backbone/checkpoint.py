"""Named-tensor checkpoint archives (safetensors) with a JSON manifest.

The manifest records the backbone config hash and stage shapes.  Loading a
checkpoint whose hash differs from the receiving model is refused unless the
caller asks for a backbone-only transfer, in which case every tensor whose
name and shape match is copied and the rest is reported.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import torch
from safetensors.torch import load_file, save_file
from safetensors import safe_open

from ..errors import CheckpointMismatch
from .swin import BackboneConfig, SwinBackbone

BACKBONE_PREFIX = "backbone."


def stage_manifest(config: BackboneConfig) -> list[dict]:
    return [{"stage": i, "channels": c, "stride": s}
            for i, (c, s) in enumerate(zip(config.stage_channels, config.stage_strides))]


def save_checkpoint(path: os.PathLike, tensors: dict[str, torch.Tensor], manifest: dict) -> None:
    flat = {k: v.detach().cpu().contiguous().clone() for k, v in sorted(tensors.items())}
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    save_file(flat, str(path), metadata={"manifest": json.dumps(manifest, sort_keys=True)})


def read_manifest(path: os.PathLike) -> dict:
    with safe_open(str(path), framework="pt") as fh:
        meta = fh.metadata() or {}
    return json.loads(meta.get("manifest", "{}"))


def load_checkpoint(path: os.PathLike) -> tuple[dict[str, torch.Tensor], dict]:
    return load_file(str(path)), read_manifest(path)


def tensor_digest(t: torch.Tensor) -> str:
    t = t.detach().cpu().contiguous()
    h = hashlib.sha256()
    h.update(str(t.dtype).encode())
    h.update(str(tuple(t.shape)).encode())
    h.update(t.numpy().tobytes())
    return h.hexdigest()


def backbone_manifest(config: BackboneConfig, kind: str, **extra) -> dict:
    return {"kind": kind, "backbone_config": config.to_dict(),
            "config_hash": config.config_hash(), "stages": stage_manifest(config), **extra}


@dataclass
class TransferReport:
    loaded: list[str] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)  # in the model, absent from the file
    unexpected: list[str] = field(default_factory=list)  # in the file, unused
    shape_mismatch: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"loaded": len(self.loaded), "missing": self.missing,
                "unexpected": self.unexpected, "shape_mismatch": self.shape_mismatch}


def backbone_tensors(tensors: dict[str, torch.Tensor], prefix: str = BACKBONE_PREFIX) -> dict:
    return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}


def load_backbone(model: SwinBackbone, path: os.PathLike, transfer: bool = False) -> TransferReport:
    """Load ``backbone.*`` tensors from a checkpoint into ``model``.

    Without ``transfer`` the checkpoint's config hash must equal the model's
    and every backbone tensor must be present.
    """
    tensors, manifest = load_checkpoint(path)
    stored_hash = manifest.get("config_hash")
    if not transfer and stored_hash != model.config.config_hash():
        raise CheckpointMismatch(
            f"{path}: backbone config hash {stored_hash} != model {model.config.config_hash()} "
            "(pass transfer=True for a backbone-only transfer)")
    report = copy_matching(model, backbone_tensors(tensors))
    if not transfer and (report.missing or report.shape_mismatch):
        raise CheckpointMismatch(f"{path}: incomplete backbone: missing={report.missing} "
                                 f"shape_mismatch={report.shape_mismatch}")
    return report


def copy_matching(model: torch.nn.Module, tensors: dict[str, torch.Tensor]) -> TransferReport:
    report = TransferReport()
    own = model.state_dict()
    with torch.no_grad():
        for name, target in own.items():
            if name not in tensors:
                report.missing.append(name)
            elif tuple(tensors[name].shape) != tuple(target.shape):
                report.shape_mismatch.append(name)
            else:
                target.copy_(tensors[name].to(target.dtype))
                report.loaded.append(name)
    report.unexpected = sorted(set(tensors) - set(own))
    return report
