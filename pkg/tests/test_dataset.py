import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dentalmim import fdi
from dentalmim.dataset import (AnnotationRecord, DatasetIndex, FoldSplit, Instance, augment_flip,
                               augment_noise, dataset_stats, fold_sizes, generate_fixture,
                               load_annotations, make_folds, parse_document, record_rng,
                               resize_record, save_annotations, to_document, write_fixture)
from dentalmim.dataset import masks as mask_codec
from dentalmim.errors import ParseError, ValidationError


def _tooth(code, mask):
    return Instance.from_mask(fdi.CategoryLabel.of_tooth(code), mask)


def _box_mask(h, w, x0, y0, x1, y1):
    m = np.zeros((h, w), dtype=bool)
    m[y0:y1, x0:x1] = True
    return m


def _six_image_index():
    records = []
    for i in range(6):
        a = _box_mask(40, 60, 5, 5, 25, 30)
        b = _box_mask(40, 60, 20, 10, 40, 35)  # overlaps a
        records.append(AnnotationRecord(i + 1, 60, 40, [_tooth(11, a), _tooth(21, b)], f"{i}.png"))
    return DatasetIndex(records)


def test_load_six_images_with_overlap(tmp_path):
    index = _six_image_index()
    path = tmp_path / "ann.json"
    save_annotations(index, path)
    loaded = load_annotations(path)
    assert len(loaded) == 6
    rec = loaded.records[0]
    assert np.any(rec.instances[0].mask() & rec.instances[1].mask())
    assert loaded == index


def test_bbox_outside_image_names_record():
    doc = to_document(_six_image_index())
    doc["annotations"][4]["bbox"] = [50.0, 10.0, 20.0, 10.0]
    with pytest.raises(ValidationError) as err:
        parse_document(doc, check_tightness=False)
    assert err.value.image_id == doc["annotations"][4]["image_id"]
    assert "image_id=3" in str(err.value)


@pytest.mark.parametrize("mutate, error", [
    (lambda d: d.pop("images"), ParseError),
    (lambda d: d["annotations"][0].pop("bbox"), ParseError),
    (lambda d: d["annotations"][0].update(category_id=99), ValidationError),
    (lambda d: d["images"].append(dict(d["images"][0])), ValidationError),
    (lambda d: d["annotations"][0].update(bbox=[5.0, 5.0, 0.0, 25.0]), ValidationError),
    (lambda d: d["annotations"][0].update(bbox=[1.0, 1.0, 30.0, 30.0]), ValidationError),
    (lambda d: d["categories"].append({"id": 77, "name": "crown"}), ValidationError),
    (lambda d: d["annotations"][0].update(segmentation=[[1, 2]]), ParseError),
])
def test_malformed_documents(mutate, error):
    doc = to_document(_six_image_index())
    mutate(doc)
    with pytest.raises(error):
        parse_document(doc)


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ParseError):
        load_annotations(p)


def test_polygon_segmentation_is_accepted():
    doc = to_document(_six_image_index())
    doc["annotations"][0]["segmentation"] = [[5, 5, 25, 5, 25, 30, 5, 30]]
    doc["annotations"][0]["bbox"] = [5.0, 5.0, 20.0, 25.0]
    doc["annotations"][0].pop("area")
    index = parse_document(doc)
    inst = index.records[0].instances[0]
    assert inst.area > 0
    x, y, w, h = mask_codec.tight_bbox(inst.mask())
    assert abs(x - 5) <= 1 and abs(y - 5) <= 1 and abs(x + w - 25) <= 1 and abs(y + h - 30) <= 1


def test_fixture_543_records():
    index = generate_fixture(543, (32, 32), seed=0, min_teeth=1, max_teeth=2)
    doc = to_document(index)
    assert len(parse_document(doc)) == 543
    split = make_folds(index, seed=0)
    assert split.sizes() == [111, 108, 108, 108, 108]


def test_fold_examples():
    assert fold_sizes(543) == [111, 108, 108, 108, 108]
    assert fold_sizes(5) == [1, 1, 1, 1, 1]
    index = DatasetIndex([AnnotationRecord(i, 8, 8) for i in range(5)])
    a, b = make_folds(index, 3), make_folds(index, 3)
    assert a == b and a.sizes() == [1] * 5
    with pytest.raises(ValueError):
        make_folds(DatasetIndex([]), 0)


@given(st.integers(min_value=5, max_value=700), st.integers(min_value=0, max_value=2**31))
def test_fold_partition_property(n, seed):
    index = DatasetIndex([AnnotationRecord(i, 8, 8) for i in range(n)])
    split = make_folds(index, seed)
    folds = [split.test_ids, *split.cv_folds]
    flat = [i for f in folds for i in f]
    assert sorted(flat) == list(range(n))
    assert len(split.test_ids) == n - 4 * (n // 5)
    assert all(len(f) == n // 5 for f in split.cv_folds)
    assert max(len(f) for f in folds) - min(len(f) for f in folds) <= 4


def test_fold_rotation_and_json(tmp_path):
    index = DatasetIndex([AnnotationRecord(i, 8, 8) for i in range(20)])
    split = make_folds(index, 1)
    train, val = split.rotation(2)
    assert set(train).isdisjoint(val) and set(train) | set(val) == set(split.development_ids)
    assert set(split.development_ids).isdisjoint(split.test_ids)
    split.save(tmp_path / "s.json")
    assert FoldSplit.load(tmp_path / "s.json") == split
    with pytest.raises(IndexError):
        split.rotation(4)


def test_resize_examples():
    rec = AnnotationRecord(1, 1991, 1127, [
        _tooth(11, _box_mask(1127, 1991, 0, 0, 1991, 1127)),
        _tooth(12, _box_mask(1127, 1991, 100, 100, 300, 300)),
    ])
    out = resize_record(rec, 800, 600)
    assert (out.width, out.height) == (800, 600)
    assert out.instances[0].bbox == pytest.approx((0, 0, 800, 600), abs=1e-9)
    assert out.instances[1].bbox == pytest.approx((40.18, 53.24, 80.36, 106.48), abs=0.01)
    assert out.instances[0].mask().all()


def test_identity_resize_keeps_boxes_exactly():
    index = generate_fixture(1, (64, 48), seed=5, max_teeth=8)
    rec = index.records[0]
    out = resize_record(rec, 64, 48)
    assert [i.bbox for i in out.instances] == [i.bbox for i in rec.instances]
    assert np.array_equal(out.image, rec.image)


@given(st.integers(min_value=8, max_value=400), st.integers(min_value=8, max_value=400),
       st.integers(min_value=8, max_value=400), st.integers(min_value=8, max_value=400))
def test_resize_inverse_boxes(w0, h0, w1, h1):
    rec = AnnotationRecord(1, w0, h0, [_tooth(11, _box_mask(h0, w0, 1, 2, w0 - 1, h0 - 2))])
    back = resize_record(resize_record(rec, w1, h1), w0, h0)
    np.testing.assert_allclose(back.instances[0].bbox, rec.instances[0].bbox, rtol=1e-6)


def test_flip_examples():
    m = _box_mask(40, 100, 10, 5, 30, 35)
    rec = AnnotationRecord(1, 100, 40, [_tooth(11, m),
                                        Instance.from_mask(fdi.CategoryLabel.of_restoration("direct"), m)])
    out = augment_flip(rec)
    assert out.instances[0].bbox == (70.0, 5.0, 20.0, 30.0)
    assert out.instances[0].label == fdi.CategoryLabel.of_tooth(21)
    assert out.instances[1].label.restoration is fdi.Restoration.DIRECT
    assert mask_codec.tight_bbox(out.instances[0].mask()) == (70.0, 5.0, 20.0, 30.0)


def test_flip_involution_on_fixture():
    for rec in generate_fixture(3, (96, 64), seed=2, max_teeth=16):
        twice = augment_flip(augment_flip(rec))
        assert [i.label for i in twice.instances] == [i.label for i in rec.instances]
        assert [i.bbox for i in twice.instances] == [i.bbox for i in rec.instances]
        for a, b in zip(twice.instances, rec.instances):
            assert np.array_equal(a.mask(), b.mask())
        assert np.array_equal(twice.image, rec.image)
        once = augment_flip(rec)
        assert sorted(i.label.index for i in once.instances) == sorted(
            fdi.flip_label(i.label).index for i in rec.instances)


def test_noise():
    img = np.full((120, 120), 0.5, dtype=np.float32)
    rec = AnnotationRecord(1, 120, 120, [_tooth(11, _box_mask(120, 120, 3, 3, 9, 9))], image=img)
    assert np.array_equal(augment_noise(rec, 0.0).image, img)
    out = augment_noise(rec, 0.05, np.random.default_rng(0))
    assert abs(out.image.std() - 0.05) < 0.2 * 0.05
    assert out.image.min() >= 0 and out.image.max() <= 1
    assert json.dumps(to_document(DatasetIndex([out]))) == json.dumps(to_document(DatasetIndex([rec])))
    with pytest.raises(ValueError):
        augment_noise(rec, -0.1)


def test_record_rng_streams():
    a = record_rng(0, 5, 1).random(4)
    assert np.array_equal(a, record_rng(0, 5, 1).random(4))
    assert not np.array_equal(a, record_rng(0, 6, 1).random(4))
    assert not np.array_equal(a, record_rng(0, 5, 2).random(4))
    assert np.array_equal(record_rng(1, "x7").random(2), record_rng(1, "x7").random(2))


def test_fixture_contract():
    index = generate_fixture(4, (256, 192), seed=0)
    assert len(index) == 4
    for rec in index:
        teeth = [i for i in rec.instances if i.label.is_tooth]
        assert 4 <= len(teeth) <= 32
        assert len({i.label for i in teeth}) == len(teeth)
        assert rec.image.shape == (192, 256)
        for inst in rec.instances:
            assert mask_codec.tight_bbox(inst.mask()) == inst.bbox
    again = generate_fixture(4, (256, 192), seed=0)
    assert to_document(again) == to_document(index)
    assert all(np.array_equal(a.image, b.image) for a, b in zip(again, index))
    assert to_document(generate_fixture(4, (256, 192), seed=1)) != to_document(index)


def test_fixture_roundtrip_on_disk(tmp_path):
    index = generate_fixture(3, (64, 48), seed=4, max_teeth=6)
    path = write_fixture(index, tmp_path)
    loaded = load_annotations(path).load_images()
    assert loaded == index
    for a, b in zip(loaded, index):
        assert np.abs(a.image - b.image).max() <= 0.5 / 255 + 1e-6


def test_stats():
    empty = dataset_stats(DatasetIndex([]))
    assert empty.total_instances == 0 and set(empty.category_counts.values()) == {0}
    assert len(empty.category_counts) == 35
    m = _box_mask(20, 20, 2, 2, 8, 8)
    rec = AnnotationRecord(1, 20, 20, [_tooth(11, m), _tooth(11, m), _tooth(11, m)])
    st_ = dataset_stats(DatasetIndex([rec]))
    assert st_.category_counts["11"] == 3
    assert st_.instances_per_image == {3: 1}
    fx = dataset_stats(generate_fixture(5, (96, 64), seed=1))
    assert sum(fx.category_counts.values()) == fx.total_instances
    assert sum(k * v for k, v in fx.instances_per_image.items()) == fx.total_instances
