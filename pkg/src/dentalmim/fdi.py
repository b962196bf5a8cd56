"""FDI two-digit tooth numbering and the 35-class label space.

Teeth occupy indices 0..31 in ascending FDI order (11..18, 21..28, 31..38,
41..48); the three restoration classes follow at 32..34.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Union

from .errors import InvalidFdi, OutOfRange

QUADRANT_NAMES = {
    1: ("maxillary", "right"),
    2: ("maxillary", "left"),
    3: ("mandibular", "left"),
    4: ("mandibular", "right"),
}

TOOTH_NAMES = {
    1: "central incisor",
    2: "lateral incisor",
    3: "canine",
    4: "first premolar",
    5: "second premolar",
    6: "first molar",
    7: "second molar",
    8: "third molar",
}

_FLIP_QUADRANT = {1: 2, 2: 1, 3: 4, 4: 3}


class Restoration(str, enum.Enum):
    DIRECT = "direct"
    INDIRECT = "indirect"
    ROOT_CANAL = "root_canal"


RESTORATION_ORDER = (Restoration.DIRECT, Restoration.INDIRECT, Restoration.ROOT_CANAL)


@dataclass(frozen=True, order=True)
class ToothIdentity:
    quadrant: int
    position: int

    def __post_init__(self):
        if self.quadrant not in QUADRANT_NAMES or self.position not in TOOTH_NAMES:
            raise InvalidFdi(f"invalid tooth quadrant={self.quadrant} position={self.position}")

    @property
    def code(self) -> int:
        return 10 * self.quadrant + self.position


@dataclass(frozen=True)
class CategoryLabel:
    """Either a tooth or a restoration class; exactly one field is set."""

    tooth: ToothIdentity | None = None
    restoration: Restoration | None = None

    def __post_init__(self):
        if (self.tooth is None) == (self.restoration is None):
            raise ValueError("CategoryLabel needs exactly one of tooth / restoration")

    @classmethod
    def of_tooth(cls, code: int) -> "CategoryLabel":
        return cls(tooth=parse_fdi(code))

    @classmethod
    def of_restoration(cls, kind: Union[str, Restoration]) -> "CategoryLabel":
        return cls(restoration=Restoration(kind))

    @property
    def is_tooth(self) -> bool:
        return self.tooth is not None

    @property
    def index(self) -> int:
        return category_index(self)

    @property
    def name(self) -> str:
        """COCO category name: the FDI code for teeth, the class key otherwise."""
        if self.tooth is not None:
            return str(self.tooth.code)
        return self.restoration.value

    def __str__(self):
        return self.name


def parse_fdi(code: int) -> ToothIdentity:
    if isinstance(code, bool) or not isinstance(code, int):
        raise InvalidFdi(f"FDI code must be an integer, got {code!r}")
    quadrant, position = divmod(code, 10)
    if quadrant not in QUADRANT_NAMES or position not in TOOTH_NAMES:
        raise InvalidFdi(f"{code} is not a permanent-dentition FDI code")
    return ToothIdentity(quadrant, position)


def flip_fdi(code: int) -> int:
    """Mirror a tooth across the midline: quadrants 1<->2 and 3<->4."""
    tooth = parse_fdi(code)
    return 10 * _FLIP_QUADRANT[tooth.quadrant] + tooth.position


def flip_label(label: CategoryLabel) -> CategoryLabel:
    if label.tooth is None:
        return label
    return CategoryLabel.of_tooth(flip_fdi(label.tooth.code))


def describe(code: int) -> str:
    tooth = parse_fdi(code)
    arch, side = QUADRANT_NAMES[tooth.quadrant]
    return f"{arch} {side} {TOOTH_NAMES[tooth.position]}"


ALL_FDI_CODES = tuple(10 * q + p for q in range(1, 5) for p in range(1, 9))
NUM_CLASSES = len(ALL_FDI_CODES) + len(RESTORATION_ORDER)

_LABELS = tuple(
    [CategoryLabel.of_tooth(c) for c in ALL_FDI_CODES]
    + [CategoryLabel(restoration=r) for r in RESTORATION_ORDER]
)
_INDEX = {label: i for i, label in enumerate(_LABELS)}
_BY_NAME = {label.name: label for label in _LABELS}
_ALIASES = {
    "direct_restoration": Restoration.DIRECT,
    "indirect_restoration": Restoration.INDIRECT,
    "root_canal_therapy": Restoration.ROOT_CANAL,
    "root canal": Restoration.ROOT_CANAL,
    "root canal therapy": Restoration.ROOT_CANAL,
}


def category_index(label: CategoryLabel) -> int:
    return _INDEX[label]


def index_to_label(index: int) -> CategoryLabel:
    if isinstance(index, bool) or not isinstance(index, int) or not 0 <= index < NUM_CLASSES:
        raise OutOfRange(f"category index {index!r} outside 0..{NUM_CLASSES - 1}")
    return _LABELS[index]


def all_labels() -> tuple[CategoryLabel, ...]:
    return _LABELS


def label_from_name(name: str) -> CategoryLabel:
    """Resolve a COCO category name ("11", "tooth_11", "root_canal", ...)."""
    key = str(name).strip().lower()
    if key in _BY_NAME:
        return _BY_NAME[key]
    if key.startswith("tooth"):
        digits = key[5:].lstrip("_- ")
        if digits.isdigit():
            return CategoryLabel.of_tooth(int(digits))
    if key in _ALIASES:
        return CategoryLabel(restoration=_ALIASES[key])
    if key.isdigit():
        return CategoryLabel.of_tooth(int(key))
    raise InvalidFdi(f"unknown category name {name!r}")


def coco_categories() -> list[dict]:
    """Category table in COCO form; ``id`` is the contiguous index plus one."""
    out = []
    for i, label in enumerate(_LABELS):
        supercategory = "tooth" if label.is_tooth else "restoration"
        out.append({"id": i + 1, "name": label.name, "supercategory": supercategory})
    return out


def coco_category_id(index: int) -> int:
    index_to_label(index)
    return index + 1


def index_from_coco_id(category_id: int) -> int:
    index_to_label(category_id - 1)
    return category_id - 1
