"""Three-panel reconstruction figures: original | masked (gray) | reconstruction."""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

GRAY = 0.5


def compose_panels(original: np.ndarray, masked_px: np.ndarray, reconstruction: np.ndarray,
                   margin: int = 4, background: float = 1.0) -> np.ndarray:
    """Return the panel strip as a float array in [0, 1].

    ``masked_px`` is a pixel-level bool map on the same canvas; the third
    panel pastes the reconstruction into the masked area only.
    """
    if original.shape != reconstruction.shape or original.shape[:2] != masked_px.shape:
        raise ValueError("original, reconstruction and mask must share one canvas")
    H, W = masked_px.shape
    m = masked_px if original.ndim == 2 else masked_px[..., None]
    masked = np.where(m, GRAY, original)
    composite = np.where(m, np.clip(reconstruction, 0.0, 1.0), original)
    extra = () if original.ndim == 2 else (original.shape[2],)
    canvas = np.full((H + 2 * margin, 3 * W + 4 * margin) + extra, background, dtype=np.float32)
    for k, panel in enumerate((original, masked, composite)):
        x0 = margin + k * (W + margin)
        canvas[margin:margin + H, x0:x0 + W] = panel
    return canvas


def emit_reconstruction(original: np.ndarray, masked_px: np.ndarray, reconstruction: np.ndarray,
                        path: os.PathLike, margin: int = 4) -> tuple[int, int]:
    """Write the strip as an 8-bit PNG; returns (width, height)."""
    canvas = compose_panels(original, masked_px, reconstruction, margin)
    arr = np.clip(np.rint(canvas * 255.0), 0, 255).astype(np.uint8)
    try:
        Image.fromarray(arr).save(path)
    except OSError as exc:
        raise OSError(f"cannot write reconstruction panel to {path}: {exc}") from exc
    return arr.shape[1], arr.shape[0]
