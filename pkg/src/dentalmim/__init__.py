"""Masked-image-modeling pre-training and cascade instance segmentation for
dental panoramic radiographs."""

__version__ = "0.1.0"
