"""Shared test utilities: finite-difference gradient checks and small model builders."""

from __future__ import annotations

import numpy as np
import torch

from dentalmim.backbone import build_backbone, preset
from dentalmim.mim import SimMIM, UMMAE, random_mask, stack_masks, stack_samples, uniform_sample


def finite_difference_error(loss_fn, params, seed: int, n_dirs: int = 2, n_coords: int = 6,
                            eps: float = 1e-6) -> float:
    """Worst relative error between autograd and central differences.

    Checks random global directions plus a few single coordinates in every
    parameter tensor.  ``loss_fn`` must be a pure function of ``params``.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    gen = torch.Generator().manual_seed(seed)

    def numeric(direction):
        with torch.no_grad():
            for p, d in zip(params, direction):
                p.add_(eps * d)
            plus = loss_fn().item()
            for p, d in zip(params, direction):
                p.sub_(2 * eps * d)
            minus = loss_fn().item()
            for p, d in zip(params, direction):
                p.add_(eps * d)
        return (plus - minus) / (2 * eps)

    worst = 0.0
    for _ in range(n_dirs):
        direction = [torch.randn(p.shape, generator=gen, dtype=p.dtype) for p in params]
        analytic = sum(float((g * d).sum()) for g, d in zip(grads, direction))
        num = numeric(direction)
        worst = max(worst, abs(analytic - num) / max(abs(analytic), abs(num), 1e-12))
    for k, p in enumerate(params):
        a_vals, n_vals = [], []
        for _ in range(n_coords):
            flat = int(torch.randint(p.numel(), (1,), generator=gen))
            direction = [torch.zeros_like(q) for q in params]
            direction[k].view(-1)[flat] = 1.0
            a_vals.append(float(grads[k].reshape(-1)[flat]))
            n_vals.append(numeric(direction))
        a_vals, n_vals = np.asarray(a_vals), np.asarray(n_vals)
        scale = max(np.abs(n_vals).max(), np.abs(a_vals).max())
        if scale > 1e-9:
            worst = max(worst, float(np.abs(a_vals - n_vals).max() / scale))
    return worst


def _perturb(model: torch.nn.Module, gen: torch.Generator, std: float = 0.3):
    # lift every parameter off its symmetric initial value so no gradient is trivially zero
    with torch.no_grad():
        for p in model.parameters():
            p.add_(std * torch.randn(p.shape, generator=gen, dtype=p.dtype))


def simmim_gradcheck_case(seed: int):
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    model = SimMIM(build_backbone(preset("tiny")), unit_px=16).double()
    _perturb(model, gen)
    images = torch.rand(1, 1, 64, 64, generator=gen, dtype=torch.float64)
    mask = stack_masks([random_mask(4, 4, 0.5, np.random.default_rng(seed))])
    return model, (lambda: model.loss(images, images, mask)[0])


def ummae_gradcheck_case(seed: int):
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    model = UMMAE(build_backbone(preset("tiny")), unit_px=16, decoder_dim=8, decoder_depth=1,
                  decoder_heads=2).double()
    _perturb(model, gen)
    images = torch.rand(1, 1, 64, 64, generator=gen, dtype=torch.float64)
    kept, secondary = stack_samples([uniform_sample(4, 4, 0.25, np.random.default_rng(seed))])
    return model, (lambda: model.loss(images, images, kept, secondary)[0])


# brute-force detection oracles


def scalar_iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def nms_oracle(boxes, scores, thr) -> list[int]:
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    kept: list[int] = []
    for i in order:
        if all(scalar_iou(boxes[k], boxes[i]) <= thr for k in kept):
            kept.append(i)
    return kept


def assign_oracle(cands, gts, pos_thr, neg_thr, min_pos) -> list[int]:
    """-1 negative, -2 ignore, else gt index; gts claim their best candidate in order."""
    if not gts:
        return [-1] * len(cands)
    out = []
    for c in cands:
        best_j, best = 0, -1.0
        for j, g in enumerate(gts):
            v = scalar_iou(c, g)
            if v > best:
                best_j, best = j, v
        out.append(best_j if best >= pos_thr else (-1 if best < neg_thr else -2))
    for j, g in enumerate(gts):
        best_i, best = None, -1.0
        for i, c in enumerate(cands):
            v = scalar_iou(c, g)
            if v > best:
                best_i, best = i, v
        if best_i is not None and best >= min_pos:
            out[best_i] = j
    return out


def random_boxes(rng: np.random.Generator, n: int, integer: bool, span: float = 40.0):
    if integer:
        xy = rng.integers(0, int(span), size=(n, 2))
        wh = rng.integers(1, int(span) // 2, size=(n, 2))
    else:
        xy = rng.uniform(0, span, size=(n, 2))
        wh = rng.uniform(0.5, span / 2, size=(n, 2))
    return np.concatenate([xy, xy + wh], axis=1).astype(np.float64)


# brute-force AP oracle


def greedy_match_oracle(iou_rows, thr) -> list[bool]:
    taken: set = set()
    flags = []
    for row in iou_rows:
        best_j, best = None, -1.0
        for j, v in enumerate(row):
            if j not in taken and v > best:
                best_j, best = j, v
        if best_j is not None and best >= thr:
            taken.add(best_j)
            flags.append(True)
        else:
            flags.append(False)
    return flags


def ap_oracle(flags, n_gt) -> float:
    """101-point interpolated AP straight from the definition."""
    points = []
    tp = fp = 0
    for f in flags:
        tp += int(f)
        fp += int(not f)
        points.append((tp / n_gt, tp / max(tp + fp, np.finfo(np.float64).eps)))
    sampled = []
    for r in np.linspace(0.0, 1.0, 101):
        cands = [p for rec, p in points if rec >= r]
        sampled.append(max(cands) if cands else 0.0)
    return float(np.mean(sampled))


# synthetic externally pre-trained checkpoint


def to_mmdet_name(local: str) -> str:
    name = local.replace("patch_embed.proj.", "patch_embed.projection.")
    name = name.replace(".attn.", ".attn.w_msa.").replace(".mlp.fc1.", ".ffn.layers.0.0.")
    name = name.replace(".mlp.fc2.", ".ffn.layers.1.")
    if name.startswith("layers."):
        name = "stages." + name[len("layers."):]
    return "backbone." + name


def write_external_checkpoint(path, seed: int = 0, layout: str = "classification") -> dict:
    """An RGB toy Swin in the layout of a public classification (or mmdet) release.

    Returns the local-name tensors the import is expected to reproduce.
    """
    torch.manual_seed(seed)
    src = build_backbone(preset("toy", in_chans=3)).state_dict()
    expected = {k: v.clone() for k, v in src.items() if k != "mask_token"}
    expected["patch_embed.proj.weight"] = src["patch_embed.proj.weight"].sum(1, keepdim=True)
    if layout == "classification":
        ext = {("norm." + k[len("norm3."):] if k.startswith("norm3.") else k): v
               for k, v in src.items() if k != "mask_token" and not k.startswith(("norm0", "norm1", "norm2"))}
        for k in ("norm0", "norm1", "norm2"):
            expected.pop(f"{k}.weight")
            expected.pop(f"{k}.bias")
        ext["head.weight"] = torch.randn(10, 128)
        ext["head.bias"] = torch.zeros(10)
        ext["layers.0.blocks.0.attn.relative_position_index"] = torch.zeros(16, 16, dtype=torch.long)
        torch.save({"model": ext}, path)
    else:
        ext = {to_mmdet_name(k): v for k, v in src.items() if k != "mask_token"}
        torch.save({"state_dict": ext}, path)
    return expected
