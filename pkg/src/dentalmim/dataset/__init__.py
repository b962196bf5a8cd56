from .fixture import generate_fixture, write_fixture
from .folds import FoldSplit, fold_sizes, make_folds
from .records import (AnnotationRecord, DatasetIndex, Instance, load_annotations, load_image,
                      parse_document, save_annotations, save_image, to_document, validate_record)
from .stats import DatasetStats, dataset_stats
from .transforms import augment_flip, augment_noise, record_rng, resize_record

__all__ = [
    "AnnotationRecord", "DatasetIndex", "DatasetStats", "FoldSplit", "Instance",
    "augment_flip", "augment_noise", "dataset_stats", "fold_sizes", "generate_fixture",
    "load_annotations", "load_image", "make_folds", "parse_document", "record_rng",
    "resize_record", "save_annotations", "save_image", "to_document", "validate_record",
    "write_fixture",
]
