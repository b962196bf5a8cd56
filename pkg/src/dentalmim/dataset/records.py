"""Annotation records and COCO-format ingestion / serialization.

Instance masks are held as compressed RLE so that 543 full-size radiographs
with ~30 instances each stay cheap in memory; :meth:`Instance.mask` decodes
on demand.  Masks of different instances may overlap.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Union

import numpy as np
from PIL import Image

from .. import fdi
from ..errors import ParseError, ValidationError
from . import masks as mask_codec

ImageId = Union[int, str]

# tolerated gap between a stored bbox and the tight bbox of its mask, per edge
BBOX_SLACK_PX = 1.0


@dataclass(frozen=True)
class Instance:
    label: fdi.CategoryLabel
    bbox: tuple[float, float, float, float]  # x, y, w, h in pixels
    rle: dict
    area: float

    def mask(self) -> np.ndarray:
        return mask_codec.decode(self.rle)

    @classmethod
    def from_mask(cls, label: fdi.CategoryLabel, mask: np.ndarray, bbox=None) -> "Instance":
        if bbox is None:
            bbox = mask_codec.tight_bbox(mask)
            if bbox is None:
                raise ValidationError("instance mask is empty")
        return cls(label=label, bbox=tuple(float(v) for v in bbox),
                   rle=mask_codec.encode(mask), area=float(np.count_nonzero(mask)))


@dataclass
class AnnotationRecord:
    image_id: ImageId
    width: int
    height: int
    instances: list[Instance] = field(default_factory=list)
    file_name: str = ""
    # float32 HxW or HxWxC in [0, 1]; never serialized into the JSON document
    image: np.ndarray | None = field(default=None, compare=False, repr=False)

    def with_image(self, image: np.ndarray | None) -> "AnnotationRecord":
        return replace(self, image=image)


@dataclass
class DatasetIndex:
    records: list[AnnotationRecord]
    categories: list[dict] = field(default_factory=fdi.coco_categories)
    image_root: Path | None = field(default=None, compare=False)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def ids(self) -> list[ImageId]:
        return [r.image_id for r in self.records]

    def by_id(self) -> dict[ImageId, AnnotationRecord]:
        return {r.image_id: r for r in self.records}

    def subset(self, ids: Iterable[ImageId]) -> "DatasetIndex":
        lookup = self.by_id()
        return DatasetIndex([lookup[i] for i in ids], self.categories, self.image_root)

    def load_images(self) -> "DatasetIndex":
        """Attach pixel data to every record lacking it (reads ``image_root``)."""
        out = []
        for rec in self.records:
            if rec.image is None:
                if self.image_root is None:
                    raise ParseError("index has no image_root to read images from")
                rec = rec.with_image(load_image(self.image_root / rec.file_name))
            out.append(rec)
        return DatasetIndex(out, self.categories, self.image_root)


def load_image(path: os.PathLike) -> np.ndarray:
    """Read an 8/16-bit grayscale or RGB file into float32 in [0, 1]."""
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64)
            scale = 65535.0 if arr.max(initial=0) <= 65535 else float(arr.max())
            return (arr / scale).astype(np.float32)
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if len(im.getbands()) >= 3 else "L")
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return arr


def save_image(image: np.ndarray, path: os.PathLike) -> None:
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def _category_lookup(categories: list) -> dict:
    lookup = {}
    for cat in categories:
        try:
            lookup[cat["id"]] = fdi.label_from_name(cat["name"])
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed category entry {cat!r}") from exc
        except fdi.InvalidFdi as exc:
            raise ValidationError(f"unknown category {cat.get('name')!r}") from exc
    return lookup


def validate_record(rec: AnnotationRecord, check_tightness: bool = True) -> None:
    if rec.width <= 0 or rec.height <= 0:
        raise ValidationError(f"non-positive image size {rec.width}x{rec.height}", rec.image_id)
    for k, inst in enumerate(rec.instances):
        x, y, w, h = inst.bbox
        if not (w > 0 and h > 0):
            raise ValidationError(f"instance {k}: degenerate bbox {inst.bbox}", rec.image_id)
        if x < 0 or y < 0 or x + w > rec.width + 1e-6 or y + h > rec.height + 1e-6:
            raise ValidationError(
                f"instance {k}: bbox {inst.bbox} exceeds image bounds {rec.width}x{rec.height}",
                rec.image_id)
        if list(inst.rle["size"]) != [rec.height, rec.width]:
            raise ValidationError(f"instance {k}: mask size {inst.rle['size']} != image size",
                                  rec.image_id)
        if check_tightness:
            tight = mask_codec.tight_bbox(inst.mask())
            if tight is None:
                raise ValidationError(f"instance {k}: empty mask", rec.image_id)
            tx, ty, tw, th = tight
            gaps = (abs(tx - x), abs(ty - y), abs(tx + tw - x - w), abs(ty + th - y - h))
            if max(gaps) > BBOX_SLACK_PX:
                raise ValidationError(
                    f"instance {k}: bbox {inst.bbox} does not tightly bound its mask {tight}",
                    rec.image_id)


def parse_document(doc: dict, image_root: Path | None = None,
                   check_tightness: bool = True) -> DatasetIndex:
    if not isinstance(doc, dict):
        raise ParseError("COCO document must be a JSON object")
    try:
        images = doc["images"]
        annotations = doc.get("annotations", [])
        categories = doc["categories"]
    except KeyError as exc:
        raise ParseError(f"COCO document missing key {exc.args[0]!r}") from exc
    labels = _category_lookup(categories)

    records: dict = {}
    for entry in images:
        try:
            image_id = entry["id"]
            rec = AnnotationRecord(image_id=image_id, width=int(entry["width"]),
                                   height=int(entry["height"]),
                                   file_name=str(entry.get("file_name", "")))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed image entry {entry!r}") from exc
        if image_id in records:
            raise ValidationError("duplicate image id", image_id)
        records[image_id] = rec

    for ann in annotations:
        try:
            image_id = ann["image_id"]
            category_id = ann["category_id"]
            bbox = tuple(float(v) for v in ann["bbox"])
            segmentation = ann["segmentation"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed annotation {ann.get('id', '?')!r}") from exc
        if image_id not in records:
            raise ValidationError(f"annotation {ann.get('id')} references unknown image", image_id)
        if category_id not in labels:
            raise ValidationError(f"unknown category id {category_id}", image_id)
        if len(bbox) != 4:
            raise ValidationError(f"bbox must have 4 values, got {bbox}", image_id)
        rec = records[image_id]
        rle = mask_codec.from_segmentation(segmentation, rec.height, rec.width)
        area = float(ann["area"]) if "area" in ann else mask_codec.area(rle)
        rec.instances.append(Instance(labels[category_id], bbox, rle, area))

    index = DatasetIndex(list(records.values()), fdi.coco_categories(), image_root)
    for rec in index.records:
        validate_record(rec, check_tightness=check_tightness)
    return index


def load_annotations(path: os.PathLike, check_tightness: bool = True) -> DatasetIndex:
    path = Path(path)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc})") from exc
    return parse_document(doc, image_root=path.parent, check_tightness=check_tightness)


def to_document(index: DatasetIndex) -> dict:
    images, annotations = [], []
    ann_id = 1
    for rec in index.records:
        images.append({"id": rec.image_id, "file_name": rec.file_name,
                       "width": rec.width, "height": rec.height})
        for inst in rec.instances:
            annotations.append({
                "id": ann_id,
                "image_id": rec.image_id,
                "category_id": inst.label.index + 1,
                "bbox": list(inst.bbox),
                "area": inst.area,
                "segmentation": {"size": list(inst.rle["size"]), "counts": inst.rle["counts"]},
                "iscrowd": 0,
            })
            ann_id += 1
    return {"images": images, "annotations": annotations, "categories": fdi.coco_categories()}


def save_annotations(index: DatasetIndex, path: os.PathLike) -> None:
    with open(path, "w") as fh:
        json.dump(to_document(index), fh, indent=1, sort_keys=True)
        fh.write("\n")
