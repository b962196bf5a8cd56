"""Synthetic panoramic-like radiographs with exact instance ground truth.

Two arcs of elliptical "teeth" meet at an occlusal curve; the image left
shows the patient's right side, so quadrants 1 and 4 are drawn on the left.
Bright blobs inside some teeth stand in for restorations.  All masks are
rasterized from the same ellipses that paint the image, so boxes and masks
are exact by construction.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .. import fdi
from .records import AnnotationRecord, DatasetIndex, Instance, save_annotations, save_image

# relative mesio-distal widths of positions 1..8
_WIDTHS = np.array([0.80, 0.72, 0.82, 0.84, 0.84, 1.20, 1.12, 1.05])
# chance that a position is the one removed when thinning the dentition
_MISSING_WEIGHT = np.array([1.0, 1.0, 0.6, 1.2, 1.2, 1.0, 1.0, 3.0])
# image-left sign of each quadrant: 1 and 4 sit on the image left
_SIDE = {1: -1.0, 2: 1.0, 3: 1.0, 4: -1.0}

TOOTH_LEVEL = 0.58
RESTORATION_LEVEL = 0.96


def _ellipse(shape, cx, cy, a, b):
    h, w = shape
    ys = np.arange(h)[:, None] + 0.5
    xs = np.arange(w)[None, :] + 0.5
    return ((xs - cx) / a) ** 2 + ((ys - cy) / b) ** 2 <= 1.0


def _background(rng, h, w):
    ys = np.linspace(-1.0, 1.0, h)[:, None]
    xs = np.linspace(-1.0, 1.0, w)[None, :]
    jaw = np.exp(-((xs / 0.9) ** 2 + (ys / 0.55) ** 2) * 1.5)
    img = 0.10 + 0.14 * jaw + 0.03 * ys
    # low-frequency blotches
    for _ in range(3):
        cx, cy = rng.uniform(-1, 1, size=2)
        img = img + 0.03 * np.exp(-(((xs - cx) / 0.4) ** 2 + ((ys - cy) / 0.3) ** 2))
    return img


def _choose_teeth(rng, n_teeth):
    weights = np.tile(_MISSING_WEIGHT, 4)
    present = np.ones(32, dtype=bool)
    n_drop = 32 - n_teeth
    if n_drop:
        drop = rng.choice(32, size=n_drop, replace=False, p=weights / weights.sum())
        present[drop] = False
    return [code for code, keep in zip(fdi.ALL_FDI_CODES, present) if keep]


def _render_one(rng, width, height, min_teeth, max_teeth, restoration_prob):
    shape = (height, width)
    img = _background(rng, height, width)
    instances = []

    mid_x = width * (0.5 + rng.uniform(-0.02, 0.02))
    occ_y = height * (0.5 + rng.uniform(-0.03, 0.03))
    arch_half = width * 0.44
    edges = np.concatenate([[0.0], np.cumsum(_WIDTHS)]) / _WIDTHS.sum() * arch_half
    crown_h = height * 0.17
    gap = height * 0.02
    curve = height * 0.10

    n_teeth = int(rng.integers(min_teeth, max_teeth + 1))
    for code in _choose_teeth(rng, n_teeth):
        quad, pos = divmod(code, 10)
        span = edges[pos] - edges[pos - 1]
        dx = (edges[pos - 1] + edges[pos]) / 2 + rng.uniform(-0.04, 0.04) * span
        cx = mid_x + _SIDE[quad] * dx
        smile = curve * (dx / arch_half) ** 2
        a = max(1.0, 0.56 * span * rng.uniform(0.92, 1.08))
        b = max(1.0, crown_h * rng.uniform(0.9, 1.1) * (1.0 if pos < 6 else 0.9))
        upper = quad in (1, 2)
        cy = occ_y - smile - gap - b if upper else occ_y - smile + gap + b
        cx = float(np.clip(cx, 0.5, width - 0.5))
        cy = float(np.clip(cy, 0.5, height - 0.5))
        tooth = _ellipse(shape, cx, cy, a, b)
        if not tooth.any():
            continue
        img = np.where(tooth, np.maximum(img, TOOTH_LEVEL + rng.uniform(-0.06, 0.06)), img)
        instances.append(Instance.from_mask(fdi.CategoryLabel.of_tooth(code), tooth))

        if rng.uniform() >= restoration_prob:
            continue
        kind = fdi.RESTORATION_ORDER[int(rng.integers(3))]
        toward_occlusal = 1.0 if upper else -1.0
        if kind is fdi.Restoration.DIRECT:
            blob = _ellipse(shape, cx, cy + toward_occlusal * 0.55 * b, 0.45 * a, 0.25 * b)
        elif kind is fdi.Restoration.INDIRECT:
            blob = _ellipse(shape, cx, cy + toward_occlusal * 0.6 * b, 1.05 * a, 0.45 * b)
        else:
            blob = _ellipse(shape, cx, cy - toward_occlusal * 0.35 * b, max(0.6, 0.14 * a), 0.5 * b)
        blob &= tooth
        if not blob.any():
            continue
        img = np.where(blob, RESTORATION_LEVEL, img)
        instances.append(Instance.from_mask(fdi.CategoryLabel(restoration=kind), blob))

    img = img + rng.normal(0.0, 0.01, size=shape)
    img = np.clip(np.rint(np.clip(img, 0.0, 1.0) * 255.0) / 255.0, 0.0, 1.0).astype(np.float32)
    return img, instances


def generate_fixture(n_images: int, image_size: tuple[int, int] = (256, 192), seed: int = 0,
                     min_teeth: int = 4, max_teeth: int = 32,
                     restoration_prob: float = 0.15) -> DatasetIndex:
    """Deterministic synthetic dataset; ``image_size`` is (width, height).

    Records carry their pixels in ``record.image``; use :func:`write_fixture`
    to materialize PNGs plus a COCO document.
    """
    if n_images < 1:
        raise ValueError("n_images must be >= 1")
    if not 1 <= min_teeth <= max_teeth <= 32:
        raise ValueError("need 1 <= min_teeth <= max_teeth <= 32")
    width, height = image_size
    records = []
    for i in range(n_images):
        rng = np.random.default_rng([int(seed), i])
        img, instances = _render_one(rng, width, height, min_teeth, max_teeth, restoration_prob)
        image_id = i + 1
        records.append(AnnotationRecord(image_id=image_id, width=width, height=height,
                                        instances=instances, file_name=f"{image_id:04d}.png",
                                        image=img))
    return DatasetIndex(records)


def write_fixture(index: DatasetIndex, out_dir: os.PathLike,
                  annotations_name: str = "annotations.json") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rec in index.records:
        if rec.image is not None:
            save_image(rec.image, out / rec.file_name)
    path = out / annotations_name
    save_annotations(index, path)
    return path
