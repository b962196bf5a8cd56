"""The four backbone initializations and import of external checkpoints."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import torch

from ..backbone import load_backbone, load_checkpoint, tensor_digest
from ..backbone.checkpoint import TransferReport, backbone_tensors
from ..backbone.swin import SwinBackbone
from ..errors import CheckpointMismatch, ConfigError

INIT_KINDS = ("random", "supervised", "simmim", "ummae")
SELF = "self"

# external prefixes that wrap the encoder in other code bases
STRIP_PREFIXES = ("module.", "backbone.", "encoder.")

# (pattern, replacement) applied in order to external tensor names
NAME_MAP = (
    (r"^patch_embed\.projection\.", "patch_embed.proj."),
    (r"^stages\.(\d+)\.", r"layers.\1."),
    (r"\.attn\.w_msa\.", ".attn."),
    (r"\.ffn\.layers\.0\.0\.", ".mlp.fc1."),
    (r"\.ffn\.layers\.1\.", ".mlp.fc2."),
    (r"^norm\.", "norm3."),
)

# buffers recomputed locally rather than imported
SKIP_PATTERNS = (r"relative_position_index$", r"attn_mask$", r"relative_coords_table$")


@dataclass(frozen=True)
class InitMode:
    kind: str
    path: Optional[str] = None

    def __post_init__(self):
        if self.kind not in INIT_KINDS:
            raise ConfigError(f"init must be one of {INIT_KINDS}, got {self.kind!r}")
        if self.kind == "random" and self.path:
            raise ConfigError("random init takes no checkpoint")
        if self.kind == "supervised" and (not self.path or self.path == SELF):
            raise ConfigError("supervised init needs the path of an external checkpoint")
        if self.path and self.path != SELF and not Path(self.path).exists():
            raise ConfigError(f"checkpoint {self.path} does not exist")

    @classmethod
    def parse(cls, text: str) -> "InitMode":
        """``random``, ``supervised:PATH``, ``simmim[:self|:PATH]``, ``ummae[:self|:PATH]``."""
        kind, _, path = str(text).partition(":")
        kind = kind.strip().lower()
        if kind in ("simmim", "ummae") and not path:
            path = SELF
        return cls(kind, path or None)

    def __str__(self) -> str:
        return self.kind if not self.path else f"{self.kind}:{self.path}"


@dataclass
class InitReport:
    mode: str
    source: Optional[str] = None
    loaded: int = 0
    mapped: dict = field(default_factory=dict)  # external name -> local name, where renamed
    unmapped: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    missing: list = field(default_factory=list)
    shape_mismatch: list = field(default_factory=list)
    digests_match: Optional[bool] = None

    def to_json(self) -> dict:
        return {"mode": self.mode, "source": self.source, "loaded": self.loaded,
                "renamed": len(self.mapped), "unmapped": self.unmapped, "skipped": self.skipped,
                "missing": self.missing, "shape_mismatch": self.shape_mismatch,
                "digests_match": self.digests_match}


def map_external_name(name: str) -> str:
    for p in STRIP_PREFIXES:
        while name.startswith(p):
            name = name[len(p):]
    for pat, rep in NAME_MAP:
        name = re.sub(pat, rep, name)
    return name


def read_external(path: os.PathLike) -> dict:
    path = str(path)
    if path.endswith(".safetensors"):
        return load_checkpoint(path)[0]
    obj = torch.load(path, map_location="cpu", weights_only=True)
    for key in ("state_dict", "model", "module"):
        if isinstance(obj, dict) and key in obj and isinstance(obj[key], dict):
            obj = obj[key]
    if not isinstance(obj, dict):
        raise CheckpointMismatch(f"{path}: no tensor mapping found")
    return {k: v for k, v in obj.items() if isinstance(v, torch.Tensor)}


def adapt_channels(src: torch.Tensor, dst_shape: torch.Size) -> Optional[torch.Tensor]:
    """Fold RGB patch-embedding filters onto fewer input channels by summation."""
    if src.ndim == 4 and len(dst_shape) == 4 and src.shape[0] == dst_shape[0] and src.shape[2:] == dst_shape[2:]:
        if dst_shape[1] == 1:
            return src.sum(dim=1, keepdim=True)
    return None


def import_external(backbone: SwinBackbone, tensors: Mapping[str, torch.Tensor]) -> InitReport:
    report = InitReport("supervised")
    own = backbone.state_dict()
    renamed = {}
    for name, t in tensors.items():
        if any(re.search(p, name) for p in SKIP_PATTERNS):
            report.skipped.append(name)
            continue
        local = map_external_name(name)
        if local not in own:
            report.unmapped.append(name)
            continue
        if local != name:
            report.mapped[name] = local
        renamed[local] = t
    with torch.no_grad():
        for local, t in renamed.items():
            target = own[local]
            if t.shape != target.shape:
                adapted = adapt_channels(t, target.shape)
                if adapted is None:
                    report.shape_mismatch.append(local)
                    continue
                t = adapted
            target.copy_(t.to(target.dtype))
            report.loaded += 1
    report.missing = sorted(set(own) - set(renamed) - {"mask_token"})
    report.unmapped.sort()
    return report


def resolve_path(mode: InitMode, self_checkpoints: Optional[Mapping[str, os.PathLike]] = None) -> Optional[str]:
    if mode.kind == "random":
        return None
    if mode.path == SELF:
        if not self_checkpoints or mode.kind not in self_checkpoints:
            raise ConfigError(f"init {mode.kind}:self needs a pre-training checkpoint from this repository")
        return str(self_checkpoints[mode.kind])
    return mode.path


def apply_init(backbone: SwinBackbone, mode: InitMode, path: Optional[str], transfer: bool = True) -> InitReport:
    """Initialize ``backbone`` in place according to ``mode``."""
    if mode.kind == "random":
        return InitReport("random")
    if mode.kind == "supervised":
        report = import_external(backbone, read_external(path))
        report.source = str(path)
        return report
    tensors, manifest = load_checkpoint(path)
    if manifest.get("kind") not in (None, mode.kind):
        raise CheckpointMismatch(f"{path} holds a {manifest.get('kind')} checkpoint, not {mode.kind}")
    tr: TransferReport = load_backbone(backbone, path, transfer=transfer)
    stored = backbone_tensors(tensors)
    own = backbone.state_dict()
    match = all(tensor_digest(own[k]) == tensor_digest(stored[k]) for k in tr.loaded)
    return InitReport(mode.kind, str(path), len(tr.loaded), {}, list(tr.unexpected), [], list(tr.missing),
                      list(tr.shape_mismatch), match and not tr.missing and not tr.shape_mismatch)
