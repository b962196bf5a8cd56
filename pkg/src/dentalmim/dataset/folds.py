"""Five-fold protocol with one fixed held-out test fold.

The four cross-validation folds each get ``N // 5`` images and the test fold
absorbs the remainder, so 543 images split 111 / 108 / 108 / 108 / 108.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .records import DatasetIndex, ImageId

NUM_CV_FOLDS = 4


@dataclass(frozen=True)
class FoldSplit:
    test_ids: tuple
    cv_folds: tuple  # NUM_CV_FOLDS tuples of ids
    seed: int

    @property
    def development_ids(self) -> list[ImageId]:
        """Every non-test id: the pool used for pre-training."""
        return [i for fold in self.cv_folds for i in fold]

    def rotation(self, val_fold: int) -> tuple[list[ImageId], list[ImageId]]:
        """(train ids, validation ids) with ``val_fold`` held out for validation."""
        if not 0 <= val_fold < len(self.cv_folds):
            raise IndexError(f"validation fold {val_fold} outside 0..{len(self.cv_folds) - 1}")
        train = [i for k, fold in enumerate(self.cv_folds) if k != val_fold for i in fold]
        return train, list(self.cv_folds[val_fold])

    def sizes(self) -> list[int]:
        return [len(self.test_ids)] + [len(f) for f in self.cv_folds]

    def to_json(self) -> dict:
        return {"seed": self.seed, "test": list(self.test_ids),
                "cv_folds": [list(f) for f in self.cv_folds]}

    @classmethod
    def from_json(cls, doc: dict) -> "FoldSplit":
        return cls(test_ids=tuple(doc["test"]), cv_folds=tuple(tuple(f) for f in doc["cv_folds"]),
                   seed=int(doc["seed"]))

    def save(self, path: os.PathLike) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path: os.PathLike) -> "FoldSplit":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def fold_sizes(n: int) -> list[int]:
    cv = n // 5
    return [n - NUM_CV_FOLDS * cv] + [cv] * NUM_CV_FOLDS


def make_folds(index: DatasetIndex, seed: int) -> FoldSplit:
    ids = index.ids
    if not ids:
        raise ValueError("cannot split an empty dataset")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    sizes = fold_sizes(len(ids))
    bounds = np.cumsum([0] + sizes)
    parts = [tuple(shuffled[bounds[k]:bounds[k + 1]]) for k in range(len(sizes))]
    return FoldSplit(test_ids=parts[0], cv_folds=tuple(parts[1:]), seed=int(seed))
