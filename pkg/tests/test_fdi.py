import pytest
from hypothesis import given, strategies as st

from dentalmim import fdi
from dentalmim.errors import InvalidFdi, OutOfRange

VALID = {10 * q + p for q in range(1, 5) for p in range(1, 9)}

# standard dental nomenclature, positions counted from the midline
NOMENCLATURE = ["central incisor", "lateral incisor", "canine", "first premolar",
                "second premolar", "first molar", "second molar", "third molar"]


def test_parse_examples():
    t = fdi.parse_fdi(11)
    assert (t.quadrant, t.position) == (1, 1)
    assert fdi.QUADRANT_NAMES[1] == ("maxillary", "right")
    t = fdi.parse_fdi(38)
    assert (t.quadrant, t.position) == (3, 8)
    assert fdi.TOOTH_NAMES[8] == "third molar"


@pytest.mark.parametrize("code", [19, 50, 7, 100, 0, 10, 20, 49, -11])
def test_parse_rejects(code):
    with pytest.raises(InvalidFdi):
        fdi.parse_fdi(code)


def test_parse_rejects_non_integers():
    for bad in (11.0, "11", True, None):
        with pytest.raises(InvalidFdi):
            fdi.parse_fdi(bad)


def test_parse_accepts_exactly_the_valid_set():
    accepted = set()
    for code in range(0, 100):
        try:
            fdi.parse_fdi(code)
        except InvalidFdi:
            continue
        accepted.add(code)
    assert accepted == VALID


def test_flip_examples():
    assert fdi.flip_fdi(11) == 21
    assert fdi.flip_fdi(36) == 46
    assert fdi.flip_fdi(48) == 38


def test_flip_involution_preserves_position():
    for code in sorted(VALID):
        flipped = fdi.flip_fdi(code)
        assert flipped in VALID and flipped != code
        assert flipped % 10 == code % 10
        assert fdi.flip_fdi(flipped) == code
        # the upper/lower arch never changes
        assert (code // 10 <= 2) == (flipped // 10 <= 2)


def test_flip_label_passes_restorations_through():
    for kind in fdi.RESTORATION_ORDER:
        label = fdi.CategoryLabel.of_restoration(kind)
        assert fdi.flip_label(label) == label
    assert fdi.flip_label(fdi.CategoryLabel.of_tooth(24)) == fdi.CategoryLabel.of_tooth(14)


def test_flip_propagates_invalid():
    with pytest.raises(InvalidFdi):
        fdi.flip_fdi(19)


def test_category_index_examples():
    assert fdi.category_index(fdi.CategoryLabel.of_tooth(11)) == 0
    assert fdi.category_index(fdi.CategoryLabel.of_tooth(48)) == 31
    assert fdi.category_index(fdi.CategoryLabel.of_restoration("direct")) == 32
    assert fdi.category_index(fdi.CategoryLabel.of_restoration("indirect")) == 33
    assert fdi.category_index(fdi.CategoryLabel.of_restoration("root_canal")) == 34


def test_category_bijection_exhaustive():
    labels = [fdi.index_to_label(i) for i in range(35)]
    assert len(set(labels)) == 35 == fdi.NUM_CLASSES
    for i, label in enumerate(labels):
        assert fdi.category_index(label) == i
        assert fdi.index_to_label(fdi.category_index(label)) == label
    teeth = [lab.tooth.code for lab in labels[:32]]
    assert teeth == sorted(VALID)
    assert [lab.restoration for lab in labels[32:]] == list(fdi.RESTORATION_ORDER)


@pytest.mark.parametrize("bad", [-1, 35, 100, True, 1.0])
def test_index_out_of_range(bad):
    with pytest.raises(OutOfRange):
        fdi.index_to_label(bad)


def test_describe():
    assert fdi.describe(11) == "maxillary right central incisor"
    assert fdi.describe(28) == "maxillary left third molar"
    assert fdi.describe(47) == "mandibular right second molar"
    arch_side = {1: "maxillary right", 2: "maxillary left", 3: "mandibular left", 4: "mandibular right"}
    for code in sorted(VALID):
        assert fdi.describe(code) == f"{arch_side[code // 10]} {NOMENCLATURE[code % 10 - 1]}"
    with pytest.raises(InvalidFdi):
        fdi.describe(59)


def test_coco_categories_and_names():
    cats = fdi.coco_categories()
    assert [c["id"] for c in cats] == list(range(1, 36))
    for c in cats:
        assert fdi.label_from_name(c["name"]).index == c["id"] - 1
        assert fdi.index_from_coco_id(c["id"]) == c["id"] - 1
        assert fdi.coco_category_id(c["id"] - 1) == c["id"]
    assert fdi.label_from_name("tooth_36") == fdi.CategoryLabel.of_tooth(36)
    assert fdi.label_from_name("Root Canal Therapy").index == 34
    with pytest.raises(InvalidFdi):
        fdi.label_from_name("crown")
    with pytest.raises(OutOfRange):
        fdi.index_from_coco_id(0)


def test_category_label_needs_exactly_one_kind():
    with pytest.raises(ValueError):
        fdi.CategoryLabel()
    with pytest.raises(ValueError):
        fdi.CategoryLabel(tooth=fdi.parse_fdi(11), restoration=fdi.Restoration.DIRECT)


@given(st.integers(min_value=-1000, max_value=1000))
def test_parse_total_on_integers(code):
    if code in VALID:
        assert fdi.parse_fdi(code).code == code
    else:
        with pytest.raises(InvalidFdi):
            fdi.parse_fdi(code)
