"""Per-record geometric and photometric transforms.

Every function returns a new record; inputs are never mutated.
"""

from __future__ import annotations

import zlib
from dataclasses import replace

import numpy as np
from PIL import Image

from .. import fdi
from . import masks as mask_codec
from .records import AnnotationRecord, Instance

DEFAULT_NOISE_SIGMA = 0.02


def _resize_image(image: np.ndarray, width: int, height: int) -> np.ndarray:
    if image.shape[1] == width and image.shape[0] == height:
        return image.copy()
    channels = [image] if image.ndim == 2 else [image[..., c] for c in range(image.shape[2])]
    out = [np.asarray(Image.fromarray(c.astype(np.float32), mode="F")
                      .resize((width, height), Image.BILINEAR)) for c in channels]
    res = out[0] if image.ndim == 2 else np.stack(out, axis=-1)
    return np.clip(res, 0.0, 1.0).astype(np.float32)


def _resize_mask_nearest(mask: np.ndarray, width: int, height: int) -> np.ndarray:
    h, w = mask.shape
    rows = np.minimum(((np.arange(height) + 0.5) * h / height).astype(np.int64), h - 1)
    cols = np.minimum(((np.arange(width) + 0.5) * w / width).astype(np.int64), w - 1)
    return mask[rows[:, None], cols[None, :]]


def resize_record(record: AnnotationRecord, target_w: int, target_h: int) -> AnnotationRecord:
    if target_w <= 0 or target_h <= 0:
        raise ValueError(f"target size must be positive, got {target_w}x{target_h}")
    sx = target_w / record.width
    sy = target_h / record.height
    identity = target_w == record.width and target_h == record.height
    instances = []
    for inst in record.instances:
        x, y, w, h = inst.bbox
        bbox = inst.bbox if identity else (x * sx, y * sy, w * sx, h * sy)
        if identity:
            rle, area = inst.rle, inst.area
        else:
            m = _resize_mask_nearest(inst.mask(), target_w, target_h)
            rle, area = mask_codec.encode(m), float(np.count_nonzero(m))
        instances.append(Instance(inst.label, bbox, rle, area))
    image = None if record.image is None else _resize_image(record.image, target_w, target_h)
    return replace(record, width=target_w, height=target_h, instances=instances, image=image)


def augment_flip(record: AnnotationRecord) -> AnnotationRecord:
    """Mirror about the vertical axis, remapping tooth numbers left <-> right."""
    W = record.width
    instances = []
    for inst in record.instances:
        x, y, w, h = inst.bbox
        mirrored = np.ascontiguousarray(inst.mask()[:, ::-1])
        instances.append(Instance(fdi.flip_label(inst.label), (W - x - w, y, w, h),
                                  mask_codec.encode(mirrored), inst.area))
    image = None if record.image is None else np.ascontiguousarray(record.image[:, ::-1])
    return replace(record, instances=instances, image=image)


def augment_noise(record: AnnotationRecord, sigma: float = DEFAULT_NOISE_SIGMA,
                  rng: np.random.Generator | None = None) -> AnnotationRecord:
    """Additive zero-mean Gaussian noise; ``sigma`` is a fraction of the [0, 1] range."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if record.image is None or sigma == 0:
        return replace(record, image=None if record.image is None else record.image.copy())
    rng = np.random.default_rng() if rng is None else rng
    noisy = record.image + rng.normal(0.0, sigma, size=record.image.shape)
    return replace(record, image=np.clip(noisy, 0.0, 1.0).astype(np.float32))


def record_rng(seed: int, image_id, epoch: int = 0) -> np.random.Generator:
    """Independent stream per (seed, image, epoch) so records can be augmented in any order."""
    tag = image_id if isinstance(image_id, int) else zlib.crc32(str(image_id).encode())
    return np.random.default_rng([int(seed), int(epoch), int(tag) & 0xFFFFFFFF])
