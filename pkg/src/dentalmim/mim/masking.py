"""Mask-unit sampling for the two pre-training strategies.

Random masking picks an exact-size uniform subset of units.  Uniform
sampling keeps one unit out of every 2x2 cell (75% dropped), packs the kept
units into a half-resolution grid, then hides an exact fraction of the kept
units behind a shared learnable token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from ..errors import OddGrid, ShapeError

DEFAULT_UNIT_PX = 16


def mask_count(n: int, ratio: float) -> int:
    """Nearest integer to ``ratio * n``, halves rounded up."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio must lie in [0, 1], got {ratio}")
    return min(n, int(math.floor(ratio * n + 0.5)))


@dataclass(frozen=True)
class MaskSpec:
    masked: np.ndarray  # (grid_h, grid_w) bool
    ratio: float
    unit_px: int = DEFAULT_UNIT_PX

    @property
    def grid_h(self) -> int:
        return self.masked.shape[0]

    @property
    def grid_w(self) -> int:
        return self.masked.shape[1]

    def pixel_mask(self) -> np.ndarray:
        u = self.unit_px
        return np.kron(self.masked, np.ones((u, u), dtype=bool))


@dataclass(frozen=True)
class UniformSample:
    kept_index: np.ndarray  # (grid_h/2, grid_w/2) in 0..3, row-major inside the 2x2 cell
    secondary: np.ndarray  # (grid_h/2, grid_w/2) bool, compact-grid positions hidden by the shared token
    secondary_ratio: float
    unit_px: int = DEFAULT_UNIT_PX

    @property
    def grid_h(self) -> int:
        return 2 * self.kept_index.shape[0]

    @property
    def grid_w(self) -> int:
        return 2 * self.kept_index.shape[1]

    def kept_positions(self) -> tuple[np.ndarray, np.ndarray]:
        """Full-grid (row, col) of the kept unit of every compact cell, shaped like the compact grid."""
        ch, cw = self.kept_index.shape
        di, dj = np.divmod(self.kept_index, 2)
        rows = 2 * np.arange(ch)[:, None] + di
        cols = 2 * np.arange(cw)[None, :] + dj
        return rows, cols

    def kept(self) -> np.ndarray:
        out = np.zeros((self.grid_h, self.grid_w), dtype=bool)
        rows, cols = self.kept_positions()
        out[rows, cols] = True
        return out

    def secondary_full(self) -> np.ndarray:
        out = np.zeros((self.grid_h, self.grid_w), dtype=bool)
        rows, cols = self.kept_positions()
        out[rows, cols] = self.secondary
        return out

    def hidden(self) -> np.ndarray:
        """Units the encoder never sees: dropped plus secondary-masked."""
        return ~self.kept() | self.secondary_full()

    def loss_units(self, secondary_only: bool = False) -> np.ndarray:
        return self.secondary_full() if secondary_only else self.hidden()

    def pixel_mask(self) -> np.ndarray:
        u = self.unit_px
        return np.kron(self.hidden(), np.ones((u, u), dtype=bool))


def random_mask(grid_h: int, grid_w: int, ratio: float, rng: np.random.Generator,
                unit_px: int = DEFAULT_UNIT_PX) -> MaskSpec:
    if grid_h < 1 or grid_w < 1:
        raise ShapeError(f"mask grid must be at least 1x1, got {grid_h}x{grid_w}")
    n = grid_h * grid_w
    k = mask_count(n, ratio)
    masked = np.zeros(n, dtype=bool)
    masked[rng.permutation(n)[:k]] = True
    return MaskSpec(masked.reshape(grid_h, grid_w), float(ratio), unit_px)


def uniform_sample(grid_h: int, grid_w: int, secondary_ratio: float, rng: np.random.Generator,
                   unit_px: int = DEFAULT_UNIT_PX) -> UniformSample:
    if grid_h % 2 or grid_w % 2 or grid_h < 2 or grid_w < 2:
        raise OddGrid(f"uniform sampling needs an even unit grid, got {grid_h}x{grid_w}")
    ch, cw = grid_h // 2, grid_w // 2
    kept_index = rng.integers(0, 4, size=(ch, cw))
    n_kept = ch * cw
    k = mask_count(n_kept, secondary_ratio)
    secondary = np.zeros(n_kept, dtype=bool)
    secondary[rng.permutation(n_kept)[:k]] = True
    return UniformSample(kept_index, secondary.reshape(ch, cw), float(secondary_ratio), unit_px)


def stack_masks(specs) -> torch.Tensor:
    return torch.from_numpy(np.stack([s.masked for s in specs]))


def stack_samples(samples) -> tuple[torch.Tensor, torch.Tensor]:
    kept = torch.from_numpy(np.stack([s.kept_index for s in samples])).long()
    secondary = torch.from_numpy(np.stack([s.secondary for s in samples]))
    return kept, secondary
