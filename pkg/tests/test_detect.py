import json
import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from dentalmim.backbone import build_backbone
from dentalmim.detect import (FPN, IGNORE, NEGATIVE, CascadeConfig, CascadeHeads, CascadeMaskRCNN,
                              Detection, DetectorConfig, MaskHead, Target, assign_targets, batched_nms,
                              box_iou, decode_deltas, detector_preset, encode_deltas, generate_anchors,
                              iou, mask_iou, nms, paste_masks, roi_align, sample_targets, to_coco_results)
from dentalmim.detect.cascade import as_rois
from dentalmim.detect.roi_align import map_roi_levels
from dentalmim.errors import ConfigError, ShapeError

from helpers import assign_oracle, nms_oracle, random_boxes


def test_iou_examples():
    assert iou((0, 0, 2, 2), (0, 0, 2, 2)) == 1.0
    assert iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0
    assert iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7, abs=1e-12)
    t = box_iou(torch.tensor([[0.0, 0, 2, 2]]), torch.tensor([[1.0, 1, 3, 3], [5.0, 5, 6, 6]]))
    assert torch.allclose(t, torch.tensor([[1 / 7, 0.0]]))
    a = np.zeros((4, 4), bool)
    a[:2] = True
    b = np.zeros((4, 4), bool)
    b[1:3] = True
    assert mask_iou(a, b) == pytest.approx(4 / 12)
    assert mask_iou(a, ~a) == 0.0 and mask_iou(a, a) == 1.0


@given(st.integers(0, 10_000))
def test_iou_symmetric_bounded(seed):
    bx = random_boxes(np.random.default_rng(seed), 2, integer=False)
    v = iou(bx[0], bx[1])
    assert 0.0 <= v <= 1.0 and v == iou(bx[1], bx[0])


def test_nms_examples():
    boxes = torch.tensor([[0.0, 0, 10, 10], [0.0, 0, 10, 10]])
    assert nms(boxes, torch.tensor([0.8, 0.9]), 0.5).tolist() == [1]
    disjoint = torch.tensor([[0.0, 0, 1, 1], [2.0, 2, 3, 3], [4.0, 4, 5, 5]])
    assert sorted(nms(disjoint, torch.tensor([0.1, 0.3, 0.2]), 0.5).tolist()) == [0, 1, 2]
    # equal scores keep the lower index
    assert nms(boxes, torch.tensor([0.5, 0.5]), 0.5).tolist() == [0]
    assert nms(torch.zeros(0, 4), torch.zeros(0), 0.5).numel() == 0


@given(st.integers(0, 10_000), st.integers(0, 50), st.booleans(), st.sampled_from([0.3, 0.5, 0.7]))
def test_nms_matches_oracle(seed, n, integer, thr):
    rng = np.random.default_rng(seed)
    bx = random_boxes(rng, n, integer)
    sc = rng.integers(0, 5, n).astype(np.float64) if integer else rng.random(n)
    got = nms(torch.as_tensor(bx), torch.as_tensor(sc), thr).tolist()
    assert got == nms_oracle(bx.tolist(), sc.tolist(), thr)


def test_batched_nms_within_groups_only():
    boxes = torch.tensor([[0.0, 0, 10, 10], [0.0, 0, 10, 10], [0.0, 0, 10, 10]])
    scores = torch.tensor([0.9, 0.8, 0.7])
    keep = batched_nms(boxes, scores, torch.tensor([0, 1, 0]), 0.5)
    assert keep.tolist() == [0, 1]


def test_assign_examples():
    gts = torch.tensor([[0.0, 0, 10, 10], [20.0, 20, 30, 30]])
    assigned, _ = assign_targets(gts.clone(), gts, 1.0, 0.3)
    assert assigned.tolist() == [0, 1]
    far = torch.tensor([[50.0, 50, 60, 60], [70.0, 70, 80, 80]])
    assigned, _ = assign_targets(far, gts, 0.7, 0.3, min_pos_iou=0.0)
    # zero overlap everywhere: each gt still claims its (first) best candidate
    assert assigned.tolist() == [1, NEGATIVE]
    assigned, _ = assign_targets(far, gts, 0.7, 0.3, min_pos_iou=0.3)
    assert assigned.tolist() == [NEGATIVE, NEGATIVE]
    mid = torch.tensor([[0.0, 0, 10, 6]])
    assert assign_targets(mid, gts[:1], 0.7, 0.3, rescue=False)[0].tolist() == [IGNORE]
    with pytest.raises(ValueError):
        assign_targets(mid, gts, 0.3, 0.7)


@given(st.integers(0, 10_000), st.integers(0, 40), st.integers(0, 10), st.booleans())
def test_assign_matches_oracle(seed, n, g, integer):
    rng = np.random.default_rng(seed)
    cands = random_boxes(rng, n, integer)
    gts = random_boxes(rng, g, integer)
    got, _ = assign_targets(torch.as_tensor(cands), torch.as_tensor(gts).reshape(-1, 4), 0.5, 0.3, 0.2)
    assert got.tolist() == assign_oracle(cands.tolist(), gts.tolist(), 0.5, 0.3, 0.2)


def test_sample_targets_counts():
    assigned = np.array([0, 1, 2, -1, -1, -1, -1, -2, 0, -1])
    gen = torch.Generator().manual_seed(0)
    pos, neg = sample_targets(assigned, 6, 0.5, gen)
    assert len(pos) == 3 and len(neg) == 3
    assert all(assigned[i] >= 0 for i in pos.tolist()) and all(assigned[i] == -1 for i in neg.tolist())
    pos, neg = sample_targets(assigned, 100, 0.25, gen)
    assert len(pos) == 4 and len(neg) == 5


def test_delta_examples():
    box = torch.tensor([[0.0, 0, 10, 10]])
    assert torch.equal(decode_deltas(box, torch.zeros(1, 4)), box)
    moved = decode_deltas(box, torch.tensor([[0.1, 0, 0, 0]]))
    assert torch.allclose(moved, torch.tensor([[1.0, 0, 11, 10]]))
    grown = decode_deltas(box, torch.tensor([[0, 0, math.log(2), 0]]))
    assert torch.allclose(grown, torch.tensor([[-5.0, 0, 15, 10]]))


@given(st.integers(0, 10_000), st.sampled_from([(1.0, 1, 1, 1), (0.1, 0.1, 0.2, 0.2)]))
def test_delta_roundtrip(seed, stds):
    rng = np.random.default_rng(seed)

    def boxes():
        # side ratios stay inside the decoder's log-scale clamp
        xy = rng.uniform(-50, 200, size=(20, 2))
        return torch.as_tensor(np.concatenate([xy, xy + rng.uniform(2, 100, size=(20, 2))], axis=1))

    a, b = boxes(), boxes()
    out = decode_deltas(a, encode_deltas(a, b, stds), stds)
    assert torch.allclose(out, b, atol=1e-5, rtol=0)


def test_anchor_examples():
    anchors = generate_anchors([(2, 2)], [8], scales=(1.0,), ratios=(0.5, 1.0, 2.0))
    assert anchors[0].shape == (12, 4)
    sq = generate_anchors([(3, 3)], [16], scales=(2.0,), ratios=(1.0,))[0]
    assert torch.allclose(sq[:, 2] - sq[:, 0], torch.full((9,), 32.0))
    assert torch.allclose(sq[:, 3] - sq[:, 1], torch.full((9,), 32.0))
    assert torch.allclose(sq[4], torch.tensor([8.0, 8, 40, 40]))
    tall = generate_anchors([(1, 1)], [8], scales=(4.0,), ratios=(4.0,))[0][0]
    assert (tall[3] - tall[1]) / (tall[2] - tall[0]) == pytest.approx(4.0)
    levels = generate_anchors([(4, 5), (2, 3)], [8, 16], scales=(1.0, 2.0), ratios=(0.5, 2.0),
                              clip_to=(30, 37))
    assert sum(len(a) for a in levels) == (20 + 6) * 4
    for a in levels:
        assert a[:, 0].min() >= 0 and a[:, 1].min() >= 0
        assert a[:, 2].max() <= 37 and a[:, 3].max() <= 30


def test_fpn_shapes_and_dataflow():
    torch.manual_seed(0)
    fpn = FPN([8, 16, 32, 64], 256)
    feats = [torch.randn(1, c, s, s) for c, s in zip([8, 16, 32, 64], [56, 28, 14, 7])]
    outs = fpn(feats)
    assert [tuple(o.shape[1:]) for o in outs] == [(256, 56, 56), (256, 28, 28), (256, 14, 14),
                                                  (256, 7, 7), (256, 4, 4)]
    zeroed = [f.clone() for f in feats]
    zeroed[-1].zero_()
    changed = fpn(zeroed)
    assert all(not torch.allclose(a, b) for a, b in zip(outs[:3], changed[:3]))
    lateral_only = FPN([8, 16, 32, 64], 16, top_down=False)
    base = lateral_only(feats)
    again = lateral_only(zeroed)
    assert all(torch.equal(a, b) for a, b in zip(base[:3], again[:3]))
    with torch.no_grad():
        for conv in fpn.lateral_convs:
            conv.weight.zero_()
    assert all(torch.count_nonzero(o) == 0 for o in fpn(feats))
    with pytest.raises(ShapeError):
        fpn(feats[:3])
    with pytest.raises(ShapeError):
        fpn([torch.randn(1, 3, 4, 4)] + feats[1:])


def test_roi_align_examples():
    const = torch.full((1, 2, 9, 9), 3.5)
    rois = torch.tensor([[0.0, 1.3, 0.7, 6.2, 5.9], [0.0, 2, 2, 4, 7]])
    assert torch.allclose(roi_align(const, rois, 7), torch.full((2, 2, 7, 7), 3.5))
    feat = torch.arange(25.0).view(1, 1, 5, 5)
    cell = roi_align(feat, torch.tensor([[0.0, 2, 1, 3, 2]]), 1, sampling_ratio=1)
    assert abs(cell.item() - feat[0, 0, 1, 2].item()) <= 1e-6
    with pytest.raises(ShapeError):
        roi_align(feat, torch.zeros(1, 4), 7)


@pytest.mark.parametrize("aligned", [True, False])
@pytest.mark.parametrize("sr", [1, 2])
def test_roi_align_matches_torchvision(aligned, sr):
    from torchvision.ops import roi_align as tv_roi_align
    gen = torch.Generator().manual_seed(int(aligned) * 10 + sr)
    feat = torch.randn(2, 3, 11, 13, generator=gen, dtype=torch.float64)
    xy = torch.rand(40, 2, generator=gen, dtype=torch.float64) * torch.tensor([24.0, 20.0]) - 2
    wh = torch.rand(40, 2, generator=gen, dtype=torch.float64) * 16 + 0.2
    rois = torch.cat([torch.randint(0, 2, (40, 1), generator=gen).double(), xy, xy + wh], dim=1)
    ours = roi_align(feat, rois, (7, 5), 0.5, sr, aligned)
    ref = tv_roi_align(feat, rois, (7, 5), 0.5, sr, aligned)
    assert torch.allclose(ours, ref, atol=1e-12, rtol=0)


def test_roi_align_gradcheck():
    gen = torch.Generator().manual_seed(0)
    feat = torch.randn(1, 1, 5, 5, generator=gen, dtype=torch.float64, requires_grad=True)
    rois = torch.tensor([[0.0, 0.6, 0.3, 3.7, 4.1], [0.0, 1.2, 1.9, 2.4, 3.3]], dtype=torch.float64)
    assert torch.autograd.gradcheck(lambda f: roi_align(f, rois, 3, 1.0, 2, True), (feat,),
                                    eps=1e-6, atol=1e-9, rtol=1e-4)


def test_map_roi_levels():
    rois = torch.tensor([[0.0, 0, 0, 32, 32], [0, 0, 0, 112, 112], [0, 0, 0, 224, 224], [0, 0, 0, 900, 900]])
    assert map_roi_levels(rois, 4).tolist() == [0, 1, 2, 3]


def test_cascade_config_validation():
    with pytest.raises(ConfigError):
        CascadeConfig(stage_ious=(0.5, 0.5, 0.7))
    with pytest.raises(ConfigError):
        CascadeConfig(stage_ious=(0.6, 0.5, 0.7))
    with pytest.raises(ConfigError):
        CascadeConfig(stage_ious=(0.5, 0.6), stage_weights=(1.0,), stage_stds=((1, 1, 1, 1),) * 2)


def test_cascade_zero_delta_heads_pass_boxes_through():
    torch.manual_seed(0)
    heads = CascadeHeads(8, [4, 8, 16, 32], 35, CascadeConfig(fc_dim=16))
    for h in heads.heads:
        torch.nn.init.zeros_(h.reg.weight)
        torch.nn.init.zeros_(h.reg.bias)
    feats = [torch.randn(1, 8, 64 // s, 64 // s) for s in (4, 8, 16, 32)]
    props = [torch.tensor([[3.0, 4.0, 20.5, 30.25], [10.0, 10.0, 60.0, 50.0], [0.0, 0.0, 64.0, 64.0]])]
    probs, rois, stage_boxes = heads.forward_test(feats, props, (64, 64))
    assert len(stage_boxes) == 4
    for b in stage_boxes:
        assert torch.equal(b, props[0])
    assert torch.allclose(probs.sum(1), torch.ones(3))
    expected = torch.stack([torch.softmax(h(heads.pool(feats, as_rois(props)))[0], 1) for h in heads.heads]).mean(0)
    assert torch.allclose(probs, expected)


def test_cascade_sampling_adds_gts_and_uses_stage_threshold():
    heads = CascadeHeads(8, [4, 8, 16, 32], 35, CascadeConfig(fc_dim=16, num_samples=64))
    gt = torch.tensor([[10.0, 10, 30, 30]])
    props = torch.tensor([[10.0, 10, 30, 28.5], [10.0, 10, 30, 24.5], [40.0, 40, 60, 60]])
    gen = torch.Generator().manual_seed(0)
    s0 = heads.sample(props, gt, torch.tensor([7]), 0, gen)
    s2 = heads.sample(props, gt, torch.tensor([7]), 2, gen)
    # IoUs of the first two proposals are 0.925 and 0.725
    assert s0.num_pos == 3 and s2.num_pos == 3
    s2b = heads.sample(props[1:], gt, torch.tensor([7]), 2, gen)
    assert s2b.num_pos == 2 and s2b.is_gt[:2].sum() == 1
    assert s0.labels[: s0.num_pos].tolist() == [7] * 3 and (s0.labels[s0.num_pos:] == 35).all()


def test_mask_paste_examples():
    box = torch.tensor([[10.0, 10.0, 38.0, 38.0]])
    full = paste_masks(torch.ones(1, 28, 28), box, 50, 50)[0]
    expected = torch.zeros(50, 50, dtype=torch.bool)
    expected[10:38, 10:38] = True
    assert torch.equal(full, expected)
    pos = paste_masks(torch.sigmoid(torch.full((1, 28, 28), float("inf"))), box, 50, 50)[0]
    assert torch.equal(pos, expected)
    neg = paste_masks(torch.sigmoid(torch.full((1, 28, 28), float("-inf"))), box, 50, 50)[0]
    assert not neg.any()
    frac = paste_masks(torch.ones(1, 28, 28), torch.tensor([[5.3, 7.6, 21.2, 19.9]]), 30, 30)[0]
    ys, xs = torch.nonzero(frac, as_tuple=True)
    assert xs.min() >= 4 and xs.max() <= 21 and ys.min() >= 7 and ys.max() <= 20


def _toy_detector(seed=0):
    torch.manual_seed(seed)
    cfg = detector_preset("toy")
    return CascadeMaskRCNN(build_backbone("toy"), cfg)


def _toy_target():
    masks = torch.zeros(2, 64, 96, dtype=torch.uint8)
    masks[0, 10:40, 10:20] = 1
    masks[1, 20:50, 50:64] = 1
    return Target(torch.tensor([[10.0, 10, 20, 40], [50.0, 20, 64, 50]]), torch.tensor([0, 33]), masks)


def test_detector_train_and_predict_contract():
    model = _toy_detector()
    images = torch.rand(1, 1, 64, 96)
    losses = model.forward_train(images, [_toy_target()], torch.Generator().manual_seed(0))
    assert set(losses) == {"rpn_cls", "rpn_reg", "s0_cls", "s0_reg", "s1_cls", "s1_reg",
                           "s2_cls", "s2_reg", "mask"}
    total = sum(losses.values())
    assert torch.isfinite(total)
    total.backward()
    assert model.backbone.patch_embed.proj.weight.grad is not None
    model.eval()
    dets = model.predict(images, [(60, 90)])[0]
    scores = [d.score for d in dets]
    assert scores == sorted(scores, reverse=True)
    assert len(dets) <= model.cfg.max_detections
    for d in dets:
        x1, y1, x2, y2 = d.box
        assert 0 <= x1 < x2 <= 90 and 0 <= y1 < y2 <= 60 and 0 <= d.label < 35
        assert d.mask.shape == (60, 90)
        ys, xs = np.nonzero(d.mask)
        if len(xs):
            assert xs.min() >= x1 - 1 and xs.max() + 1 <= x2 + 1
            assert ys.min() >= y1 - 1 and ys.max() + 1 <= y2 + 1
    with pytest.raises(ShapeError):
        model.features(torch.rand(1, 1, 60, 96))


def test_detector_config_roundtrip_and_strictness():
    cfg = detector_preset("toy")
    assert DetectorConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ConfigError):
        DetectorConfig.from_dict({"fpn_chanels": 3})
    with pytest.raises(ConfigError):
        detector_preset("huge")


def test_mask_head_shapes():
    head = MaskHead(8, 35, channels=8, num_convs=2)
    assert head(torch.randn(3, 8, 14, 14)).shape == (3, 35, 28, 28)


def test_coco_results_serialization():
    mask = np.zeros((6, 8), dtype=bool)
    mask[1:3, 2:5] = True
    dets = {2: [Detection((2.0, 1.0, 5.0, 3.0), 34, 0.75, mask)], 1: [Detection((0.0, 0, 1, 1), 0, 0.5)]}
    rows = to_coco_results(dets)
    assert [r["image_id"] for r in rows] == [1, 2]
    assert rows[1]["category_id"] == 35 and rows[1]["bbox"] == [2.0, 1.0, 3.0, 2.0]
    assert rows[1]["segmentation"]["size"] == [6, 8]
    assert "segmentation" not in rows[0]
    json.dumps(rows)
