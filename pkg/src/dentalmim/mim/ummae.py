"""UM-MAE: uniform 2x2 sampling, compact encoding, lightweight decoder, MSE loss."""

from __future__ import annotations

from typing import Optional

import torch
import torch.nn as nn

from ..backbone.swin import SwinBackbone
from ..errors import EmptyMask, ShapeError


def compact_reorganize(tokens: torch.Tensor, kept_index: torch.Tensor, secondary: torch.Tensor,
                       shared_token: torch.Tensor) -> torch.Tensor:
    """Gather the kept unit of every 2x2 cell into a half-resolution token grid.

    ``tokens`` (B, h, w, D) covers a (gh, gw) unit grid, each unit an r x r
    token block.  ``kept_index`` and ``secondary`` are (B, gh/2, gw/2).
    """
    B, h, w, D = tokens.shape
    ch, cw = kept_index.shape[1:]
    gh, gw = 2 * ch, 2 * cw
    if kept_index.shape[0] != B or secondary.shape != kept_index.shape:
        raise ShapeError("sample tensors must be (B, gh/2, gw/2) matching the token batch")
    if h % gh or w % gw or h // gh != w // gw:
        raise ShapeError(f"unit grid {gh}x{gw} does not tile token grid {h}x{w}")
    r = h // gh
    kept_index = kept_index.to(tokens.device)
    di, dj = kept_index // 2, kept_index % 2
    ci = torch.arange(ch, device=tokens.device).view(1, ch, 1)
    cj = torch.arange(cw, device=tokens.device).view(1, 1, cw)
    unit_rows = (2 * ci + di).repeat_interleave(r, 1).repeat_interleave(r, 2)  # B, h/2, w/2
    unit_cols = (2 * cj + dj).repeat_interleave(r, 1).repeat_interleave(r, 2)
    ti = torch.arange(h // 2, device=tokens.device).view(1, -1, 1) % r
    tj = torch.arange(w // 2, device=tokens.device).view(1, 1, -1) % r
    src_rows = unit_rows * r + ti
    src_cols = unit_cols * r + tj
    batch = torch.arange(B, device=tokens.device).view(B, 1, 1)
    compact = tokens[batch, src_rows, src_cols]
    sec = secondary.to(tokens.device).repeat_interleave(r, 1).repeat_interleave(r, 2)
    sec = sec.unsqueeze(-1).to(tokens.dtype)
    return compact * (1.0 - sec) + shared_token.reshape(1, 1, 1, D).to(tokens.dtype) * sec


def scatter_compact_units(compact_units: torch.Tensor, kept_index: torch.Tensor,
                          fill: torch.Tensor) -> torch.Tensor:
    """Inverse placement at unit level: (B, ch, cw, D) -> (B, 2ch, 2cw, D), ``fill`` elsewhere."""
    B, ch, cw, D = compact_units.shape
    full = fill.reshape(1, 1, 1, D).to(compact_units.dtype).expand(B, 2 * ch, 2 * cw, D).clone()
    di, dj = kept_index // 2, kept_index % 2
    rows = 2 * torch.arange(ch, device=compact_units.device).view(1, ch, 1) + di.to(compact_units.device)
    cols = 2 * torch.arange(cw, device=compact_units.device).view(1, 1, cw) + dj.to(compact_units.device)
    batch = torch.arange(B, device=compact_units.device).view(B, 1, 1)
    full[batch, rows, cols] = compact_units
    return full


def patchify(images: torch.Tensor, unit_px: int) -> torch.Tensor:
    """(B, C, H, W) -> (B, gh*gw, unit*unit*C), units row-major, pixels (y, x, c)."""
    B, C, H, W = images.shape
    u = unit_px
    if H % u or W % u:
        raise ShapeError(f"{H}x{W} image is not a whole number of {u}px units")
    x = images.reshape(B, C, H // u, u, W // u, u).permute(0, 2, 4, 3, 5, 1)
    return x.reshape(B, (H // u) * (W // u), u * u * C)


def unpatchify(patches: torch.Tensor, grid_h: int, grid_w: int, unit_px: int, chans: int) -> torch.Tensor:
    B = patches.shape[0]
    u = unit_px
    x = patches.reshape(B, grid_h, grid_w, u, u, chans).permute(0, 5, 1, 3, 2, 4)
    return x.reshape(B, chans, grid_h * u, grid_w * u)


def sincos_2d(grid_h: int, grid_w: int, dim: int, device=None, dtype=torch.float32) -> torch.Tensor:
    """Fixed 2-D sine-cosine position table of shape (grid_h, grid_w, dim)."""
    if dim % 4:
        raise ShapeError("position embedding width must be a multiple of 4")
    quarter = dim // 4
    omega = 1.0 / (10000 ** (torch.arange(quarter, dtype=torch.float64) / quarter))
    ys = torch.arange(grid_h, dtype=torch.float64)[:, None] * omega[None, :]
    xs = torch.arange(grid_w, dtype=torch.float64)[:, None] * omega[None, :]
    emb = torch.cat([
        torch.sin(ys)[:, None, :].expand(grid_h, grid_w, quarter),
        torch.cos(ys)[:, None, :].expand(grid_h, grid_w, quarter),
        torch.sin(xs)[None, :, :].expand(grid_h, grid_w, quarter),
        torch.cos(xs)[None, :, :].expand(grid_h, grid_w, quarter),
    ], dim=-1)
    return emb.to(device=device, dtype=dtype)


class DecoderBlock(nn.Module):
    def __init__(self, dim, num_heads, mlp_ratio=4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, num_heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x):
        y = self.norm1(x)
        x = x + self.attn(y, y, y, need_weights=False)[0]
        return x + self.mlp(self.norm2(x))


class UMMAEDecoder(nn.Module):
    """Restores the full unit grid and predicts every unit's pixels.

    The stride-32 encoder output of the compact grid is unfolded to one
    token per kept unit, scattered back to its original position, dropped
    units get a learnable placeholder, and a fixed sine-cosine table adds
    position before a few global-attention blocks.
    """

    def __init__(self, enc_dim: int, enc_stride: int, unit_px: int = 16, out_chans: int = 1,
                 dim: int = 64, depth: int = 1, num_heads: int = 4, mlp_ratio: float = 4.0):
        super().__init__()
        # one stride-32 token of the compact grid spans `fold` x `fold` compact units
        if enc_stride % unit_px:
            raise ShapeError(f"encoder stride {enc_stride} is not a multiple of unit {unit_px}")
        self.fold = enc_stride // unit_px
        self.unit_px = unit_px
        self.out_chans = out_chans
        self.dim = dim
        self.embed = nn.Linear(enc_dim, dim * self.fold * self.fold)
        self.placeholder = nn.Parameter(torch.zeros(dim))
        self.blocks = nn.ModuleList([DecoderBlock(dim, num_heads, mlp_ratio) for _ in range(depth)])
        self.norm = nn.LayerNorm(dim)
        self.pred = nn.Linear(dim, unit_px * unit_px * out_chans)
        nn.init.normal_(self.placeholder, std=0.02)

    def forward(self, enc_out: torch.Tensor, kept_index: torch.Tensor) -> torch.Tensor:
        """(B, C, h, w) compact encoder output -> (B, gh*gw, unit*unit*chans)."""
        B, _, h, w = enc_out.shape
        ch, cw = kept_index.shape[1:]
        f = self.fold
        x = self.embed(enc_out.permute(0, 2, 3, 1))  # B, h, w, f*f*dim
        x = x.reshape(B, h, w, f, f, self.dim).permute(0, 1, 3, 2, 4, 5).reshape(B, h * f, w * f, self.dim)
        if x.shape[1] < ch or x.shape[2] < cw:
            raise ShapeError(f"encoder output {h}x{w} cannot cover compact unit grid {ch}x{cw}")
        x = x[:, :ch, :cw]
        full = scatter_compact_units(x, kept_index, self.placeholder)
        gh, gw = full.shape[1:3]
        full = full + sincos_2d(gh, gw, self.dim, full.device, full.dtype)
        seq = full.reshape(B, gh * gw, self.dim)
        for blk in self.blocks:
            seq = blk(seq)
        return self.pred(self.norm(seq))


def ummae_loss(pred: torch.Tensor, target: torch.Tensor, loss_mask: torch.Tensor,
               valid: Optional[torch.Tensor] = None) -> torch.Tensor:
    """MSE over the pixels of units flagged in ``loss_mask`` (B, N).

    ``valid`` optionally (B, N, P) marks non-padded pixels inside each unit.
    """
    if pred.shape != target.shape:
        raise ShapeError(f"pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    if loss_mask.shape != pred.shape[:2]:
        raise ShapeError(f"loss mask {tuple(loss_mask.shape)} vs units {tuple(pred.shape[:2])}")
    w = loss_mask.to(pred.dtype).unsqueeze(-1).expand_as(pred)
    if valid is not None:
        w = w * valid.to(pred.dtype)
    denom = w.sum()
    if denom.item() == 0:
        raise EmptyMask("no masked units to reconstruct")
    return ((pred - target) ** 2 * w).sum() / denom


class UMMAE(nn.Module):
    def __init__(self, backbone: SwinBackbone, unit_px: int = 16, out_chans: Optional[int] = None,
                 decoder_dim: int = 64, decoder_depth: int = 1, decoder_heads: int = 4):
        super().__init__()
        cfg = backbone.config
        if unit_px % cfg.patch_size:
            raise ShapeError(f"mask unit {unit_px}px is not a multiple of patch size {cfg.patch_size}")
        self.backbone = backbone
        self.unit_px = unit_px
        self.out_chans = out_chans or cfg.in_chans
        self.decoder = UMMAEDecoder(cfg.stage_channels[-1], cfg.stage_strides[-1], unit_px,
                                    self.out_chans, decoder_dim, decoder_depth, decoder_heads)
        self.last_compact_shape: tuple = ()

    def encode(self, images, kept_index, secondary):
        tokens = self.backbone.embed(images)
        compact = compact_reorganize(tokens, kept_index, secondary, self.backbone.mask_token)
        self.last_compact_shape = tuple(compact.shape)
        return self.backbone.forward_tokens(compact)

    def forward(self, images, kept_index, secondary):
        feats = self.encode(images, kept_index, secondary)
        return self.decoder(feats[-1], kept_index)

    def loss(self, images, target, kept_index, secondary, valid=None, secondary_only=False):
        pred = self(images, kept_index, secondary)
        loss_mask = loss_units(kept_index, secondary, secondary_only).flatten(1)
        valid_p = None if valid is None else patchify(valid.unsqueeze(1).to(pred.dtype), self.unit_px)
        if valid_p is not None and self.out_chans > 1:
            valid_p = valid_p.repeat_interleave(self.out_chans, dim=-1)
        tgt = patchify(target, self.unit_px)
        return ummae_loss(pred, tgt, loss_mask, valid_p), pred


def loss_units(kept_index: torch.Tensor, secondary: torch.Tensor, secondary_only: bool = False) -> torch.Tensor:
    """(B, gh, gw) bool over units counted in the loss."""
    B, ch, cw = kept_index.shape
    zero = torch.zeros(1, device=kept_index.device)
    sec_full = scatter_compact_units(secondary.unsqueeze(-1).float(), kept_index, zero).squeeze(-1) > 0.5
    if secondary_only:
        return sec_full
    ones = torch.ones(B, ch, cw, 1, device=kept_index.device)
    kept_full = scatter_compact_units(ones, kept_index, zero).squeeze(-1) > 0.5
    return ~kept_full | sec_full
