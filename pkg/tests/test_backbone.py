import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from dentalmim.backbone import (BackboneConfig, PatchEmbed, PatchMerging, SwinBlock, attach_mask_tokens,
                                backbone_manifest, build_backbone, load_backbone, preset,
                                read_manifest, save_checkpoint, tensor_digest, window_partition,
                                window_reverse)
from dentalmim.errors import CheckpointMismatch, ConfigError, ShapeError


def _block(dim=4, heads=2, ws=4, shift=0, seed=0):
    torch.manual_seed(seed)
    blk = SwinBlock(dim, heads, ws, shift).double()
    with torch.no_grad():
        blk.attn.relative_position_bias_table.normal_(0, 0.5)
    return blk.eval()


def test_patch_embed_shapes():
    pe = PatchEmbed(4, 1, 96)
    assert pe(torch.zeros(1, 1, 224, 224)).shape == (1, 56, 56, 96)
    assert pe(torch.zeros(1, 1, 608, 800)).shape == (1, 152, 200, 96)
    with pytest.raises(ShapeError):
        pe(torch.zeros(1, 1, 0, 8))
    with pytest.raises(ShapeError):
        pe(torch.zeros(1, 3, 8, 8))


def test_patch_embed_zero_image():
    pe = PatchEmbed(4, 1, 8)
    torch.nn.init.zeros_(pe.proj.bias)
    assert torch.count_nonzero(pe(torch.zeros(2, 1, 16, 16))) == 0


def test_window_partition_roundtrip():
    x = torch.randn(2, 8, 12, 3)
    w = window_partition(x, 4)
    assert w.shape == (12, 16, 3)
    assert torch.equal(window_reverse(w, 4, 8, 12), x)


def test_unshifted_windows_are_independent():
    blk = _block()
    x = torch.randn(1, 8, 8, 4, dtype=torch.float64)
    base = blk(x)
    y = x.clone()
    y[:, :4, :4] = 0  # window (0, 0)
    out = blk(y)
    assert not torch.equal(out[:, :4, :4], base[:, :4, :4])
    assert torch.equal(out[:, 4:, :], base[:, 4:, :])
    assert torch.equal(out[:, :4, 4:], base[:, :4, 4:])


def test_attention_rows_sum_to_one():
    for shift in (0, 2):
        blk = _block(shift=shift)
        _, probs = blk.attend(torch.randn(2, 8, 8, 4, dtype=torch.float64), return_attn=True)
        assert probs.shape == (2 * 4, 2, 16, 16)
        np.testing.assert_allclose(probs.sum(-1).detach().numpy(), 1.0, atol=1e-6)


def _shifted_partner_oracle(H, W, ws, s):
    """Brute-force: which grid positions share a masked window after a cyclic shift by ``s``."""
    def region(v, n):
        return 0 if v < n - ws else (1 if v < n - s else 2)

    key = {}
    for i in range(H):
        for j in range(W):
            a, b = (i - s) % H, (j - s) % W
            key[(i, j)] = (a // ws, b // ws, region(a, H), region(b, W))
    return key


def test_shifted_receptive_field_probe():
    H = W = 8
    blk = _block(shift=2, seed=1)
    x = torch.randn(1, H, W, 4, dtype=torch.float64)
    base = blk.attend(x)
    key = _shifted_partner_oracle(H, W, 4, 2)
    for i in range(H):
        for j in range(W):
            y = x.clone()
            y[0, i, j] += 1.0
            changed = (blk.attend(y) != base).any(-1)[0]
            expected = torch.tensor([[key[(a, b)] == key[(i, j)] for b in range(W)] for a in range(H)])
            assert torch.equal(changed, expected), (i, j)


def test_patch_merging_shapes():
    pm = PatchMerging(8)
    assert pm(torch.randn(1, 4, 4, 8)).shape == (1, 2, 2, 16)
    assert PatchMerging(128)(torch.randn(1, 56, 56, 128)).shape == (1, 28, 28, 256)


def test_patch_merging_identity_on_constant_input():
    pm = PatchMerging(2)
    with torch.no_grad():
        pm.reduction.weight.copy_(torch.eye(4, 8))
    x = torch.randn(1, 1, 1, 2).expand(1, 4, 6, 2)
    out = pm(x)
    assert torch.allclose(out, out[:, :1, :1].expand_as(out))


def test_forward_features_swin_b():
    model = build_backbone(preset("swin_b")).eval()
    with torch.no_grad():
        feats = model(torch.randn(1, 3, 224, 224))
    assert [tuple(f.shape[1:]) for f in feats] == [(128, 56, 56), (256, 28, 28), (512, 14, 14), (1024, 7, 7)]


def test_forward_features_toy_and_determinism():
    torch.manual_seed(0)
    model = build_backbone("toy").eval()
    x = torch.randn(2, 1, 64, 64)
    with torch.no_grad():
        a = model(x)
        b = model(x)
    assert [tuple(f.shape[1:]) for f in a] == [(16, 16, 16), (32, 8, 8), (64, 4, 4), (128, 2, 2)]
    assert all(torch.equal(p, q) for p, q in zip(a, b))


@given(st.sampled_from([2, 4, 8]), st.integers(1, 4), st.integers(1, 3), st.integers(1, 4),
       st.integers(1, 4))
def test_stride_channel_doubling(embed, patch, ws, hu, wu):
    cfg = BackboneConfig(patch_size=patch, embed_dim=embed, depths=(1, 1, 1, 1),
                         num_heads=(1, 1, 1, 1), window_size=ws)
    model = build_backbone(cfg).eval()
    s = 8 * patch
    with torch.no_grad():
        feats = model(torch.randn(1, 1, hu * s, wu * s))
    for i, f in enumerate(feats):
        assert f.shape[1] == embed * 2 ** i
        assert tuple(f.shape[2:]) == (hu * s // cfg.stage_strides[i], wu * s // cfg.stage_strides[i])


def test_config_validation():
    with pytest.raises(ConfigError):
        BackboneConfig(depths=(1, 1, 1))
    with pytest.raises(ConfigError):
        BackboneConfig(embed_dim=6, num_heads=(4, 1, 1, 1))
    with pytest.raises(ConfigError):
        preset("swin_xl")
    with pytest.raises(ConfigError):
        SwinBlock(4, 1, 4, shift_size=4)


def test_attach_mask_tokens():
    tokens = torch.randn(1, 8, 8, 3)
    token = torch.tensor([7.0, 8.0, 9.0])
    none = torch.zeros(1, 2, 2, dtype=torch.bool)
    assert torch.equal(attach_mask_tokens(tokens, none, token), tokens)
    full = torch.ones(1, 2, 2, dtype=torch.bool)
    assert torch.equal(attach_mask_tokens(tokens, full, token), token.expand(1, 8, 8, 3))
    one = none.clone()
    one[0, 1, 0] = True
    out = attach_mask_tokens(tokens, one, token)
    replaced = (out == token).all(-1)[0]
    assert replaced.sum() == 16 and replaced[4:, :4].all()
    with pytest.raises(ShapeError):
        attach_mask_tokens(tokens, torch.zeros(1, 3, 3, dtype=torch.bool), token)


def test_mask_unit_replaces_4x4_token_block():
    model = build_backbone("toy")
    img = torch.randn(1, 1, 64, 64)
    tokens = model.embed(img)
    assert tokens.shape[1:3] == (16, 16)
    mask = torch.zeros(1, 4, 4, dtype=torch.bool)
    mask[0, 2, 3] = True
    out = model.attach_mask_tokens(tokens, mask)
    diff = (out != tokens).any(-1)[0]
    assert diff.sum() == 16 and diff[8:12, 12:16].all()


def test_checkpoint_roundtrip_and_hash_gate(tmp_path):
    torch.manual_seed(0)
    model = build_backbone("toy")
    path = tmp_path / "ck.safetensors"
    tensors = {f"backbone.{k}": v for k, v in model.state_dict().items()}
    tensors["head.w"] = torch.ones(2)
    save_checkpoint(path, tensors, backbone_manifest(model.config, "simmim"))
    manifest = read_manifest(path)
    assert manifest["config_hash"] == model.config.config_hash()
    assert [s["stride"] for s in manifest["stages"]] == [4, 8, 16, 32]

    torch.manual_seed(1)
    fresh = build_backbone("toy")
    report = load_backbone(fresh, path)
    assert not report.missing and not report.shape_mismatch
    for name, t in model.state_dict().items():
        assert tensor_digest(fresh.state_dict()[name]) == tensor_digest(t)

    other = build_backbone(preset("toy", window_size=2))
    with pytest.raises(CheckpointMismatch):
        load_backbone(other, path)
    report = load_backbone(other, path, transfer=True)
    assert "layers.0.blocks.0.attn.relative_position_bias_table" in report.shape_mismatch
    assert "patch_embed.proj.weight" in report.loaded
