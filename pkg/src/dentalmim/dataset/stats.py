"""Per-category instance counts and per-image instance histograms."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .. import fdi
from .records import DatasetIndex


@dataclass
class DatasetStats:
    n_images: int
    total_instances: int
    category_counts: dict[str, int]  # keyed by COCO category name, all 35 present
    instances_per_image: dict[int, int]  # instance count -> number of images

    def to_json(self) -> dict:
        return {"n_images": self.n_images, "total_instances": self.total_instances,
                "category_counts": self.category_counts,
                "instances_per_image": {str(k): v for k, v in sorted(self.instances_per_image.items())}}


def dataset_stats(index: DatasetIndex) -> DatasetStats:
    counts = {label.name: 0 for label in fdi.all_labels()}
    hist: Counter = Counter()
    for rec in index.records:
        hist[len(rec.instances)] += 1
        for inst in rec.instances:
            counts[inst.label.name] += 1
    return DatasetStats(n_images=len(index.records), total_instances=sum(counts.values()),
                        category_counts=counts, instances_per_image=dict(hist))
