"""Batch assembly: resize, pad to the backbone stride, normalize, build detection targets."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from ..dataset import AnnotationRecord, DatasetIndex, augment_flip, augment_noise, record_rng, resize_record
from ..detect.model import Target

# grayscale radiographs are mapped to roughly unit variance around zero
IMAGE_MEAN = 0.5
IMAGE_STD = 0.25
PAD_MULTIPLE = 32


@dataclass
class Batch:
    ids: list
    images: torch.Tensor  # (B, C, Hp, Wp) normalized network input
    raw: torch.Tensor  # (B, C, Hp, Wp) pixels in [0, 1], zero in padding
    valid: torch.Tensor  # (B, Hp, Wp) bool, False in padding
    sizes: list  # unpadded (H, W) per image
    targets: list  # detect.model.Target per image


def padded_size(h: int, w: int, multiple: int = PAD_MULTIPLE) -> tuple[int, int]:
    return int(math.ceil(h / multiple) * multiple), int(math.ceil(w / multiple) * multiple)


def image_channels(image: np.ndarray, in_chans: int) -> np.ndarray:
    """(C, H, W) with the requested channel count; gray is replicated, colour averaged."""
    if image.ndim == 2:
        return np.repeat(image[None], in_chans, axis=0)
    chw = np.transpose(image, (2, 0, 1))
    if chw.shape[0] == in_chans:
        return chw
    return np.repeat(chw.mean(axis=0, keepdims=True), in_chans, axis=0)


def record_target(rec: AnnotationRecord) -> Target:
    n = len(rec.instances)
    if n == 0:
        return Target(torch.zeros(0, 4), torch.zeros(0, dtype=torch.long),
                      torch.zeros(0, rec.height, rec.width, dtype=torch.uint8))
    boxes = torch.tensor([[x, y, x + w, y + h] for x, y, w, h in (i.bbox for i in rec.instances)],
                         dtype=torch.float32)
    labels = torch.tensor([i.label.index for i in rec.instances], dtype=torch.long)
    masks = torch.from_numpy(np.stack([i.mask() for i in rec.instances]).astype(np.uint8))
    return Target(boxes, labels, masks)


def collate(records: Sequence[AnnotationRecord], in_chans: int, multiple: int = PAD_MULTIPLE,
            with_targets: bool = True) -> Batch:
    H = max(r.height for r in records)
    W = max(r.width for r in records)
    Hp, Wp = padded_size(H, W, multiple)
    raw = torch.zeros(len(records), in_chans, Hp, Wp)
    valid = torch.zeros(len(records), Hp, Wp, dtype=torch.bool)
    for b, r in enumerate(records):
        raw[b, :, : r.height, : r.width] = torch.from_numpy(image_channels(r.image, in_chans).astype(np.float32))
        valid[b, : r.height, : r.width] = True
    images = (raw - IMAGE_MEAN) / IMAGE_STD * valid.unsqueeze(1)
    targets = [record_target(r) for r in records] if with_targets else []
    return Batch([r.image_id for r in records], images, raw, valid,
                 [(r.height, r.width) for r in records], targets)


def prepare(index: DatasetIndex, ids: Sequence, image_size: tuple[int, int]) -> dict:
    """Resized records for ``ids`` keyed by id; images are loaded if needed."""
    lookup = index.by_id()
    out = {}
    for i in ids:
        rec = lookup[i]
        if rec.image is None:
            rec = index.subset([i]).load_images().records[0]
        W, H = image_size
        out[i] = resize_record(rec, W, H)
    return out


def epoch_batches(ids: Sequence, batch_size: int, seed: int, epoch: int, shuffle: bool = True) -> list[list]:
    ids = list(ids)
    if shuffle:
        order = np.random.default_rng([int(seed), int(epoch), 7]).permutation(len(ids))
        ids = [ids[k] for k in order]
    return [ids[k: k + batch_size] for k in range(0, len(ids), batch_size)]


def augment(rec: AnnotationRecord, seed: int, epoch: int, flip_prob: float, noise_sigma: float) -> AnnotationRecord:
    rng = record_rng(seed, rec.image_id, epoch)
    if flip_prob > 0 and rng.random() < flip_prob:
        rec = augment_flip(rec)
    if noise_sigma > 0:
        rec = augment_noise(rec, noise_sigma, rng)
    return rec
