"""Hierarchical shifted-window transformer encoder.

Layout follows the usual Swin code base (``patch_embed``, ``layers.{i}.blocks``,
``layers.{i}.downsample``) so published checkpoints map onto it by name.
Inputs of any size are accepted: each block pads its grid up to a multiple
of the window and masks the padded keys out of attention, so padding never
changes the values at real positions.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigError, ShapeError

NUM_STAGES = 4
# additive logit for disallowed key positions; exp() underflows to exactly 0
MASK_VALUE = -1e4


@dataclass
class BackboneConfig:
    patch_size: int = 4
    in_chans: int = 1
    embed_dim: int = 96
    depths: tuple = (2, 2, 6, 2)
    num_heads: tuple = (3, 6, 12, 24)
    window_size: int = 7
    mlp_ratio: float = 4.0
    qkv_bias: bool = True
    drop_rate: float = 0.0
    attn_drop_rate: float = 0.0
    drop_path_rate: float = 0.0
    patch_norm: bool = True

    def __post_init__(self):
        self.depths = tuple(int(d) for d in self.depths)
        self.num_heads = tuple(int(h) for h in self.num_heads)
        if len(self.depths) != NUM_STAGES or len(self.num_heads) != NUM_STAGES:
            raise ConfigError("backbone needs exactly 4 stages of depths / num_heads")
        if self.patch_size < 1 or self.window_size < 1 or self.embed_dim < 1:
            raise ConfigError("patch_size, window_size and embed_dim must be positive")
        for i, heads in enumerate(self.num_heads):
            if (self.embed_dim * 2 ** i) % heads:
                raise ConfigError(f"stage {i} width {self.embed_dim * 2 ** i} not divisible by {heads} heads")

    @property
    def stage_channels(self) -> tuple:
        return tuple(self.embed_dim * 2 ** i for i in range(NUM_STAGES))

    @property
    def stage_strides(self) -> tuple:
        return tuple(self.patch_size * 2 ** i for i in range(NUM_STAGES))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["depths"] = list(self.depths)
        d["num_heads"] = list(self.num_heads)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


PRESETS = {
    "swin_b": dict(in_chans=3, embed_dim=128, depths=(2, 2, 18, 2), num_heads=(4, 8, 16, 32),
                   window_size=7),
    "swin_t": dict(in_chans=3, embed_dim=96, depths=(2, 2, 6, 2), num_heads=(3, 6, 12, 24),
                   window_size=7),
    "toy": dict(in_chans=1, embed_dim=16, depths=(1, 1, 1, 1), num_heads=(1, 2, 4, 8),
                window_size=4, mlp_ratio=2.0),
    # small enough for finite-difference gradient checks
    "tiny": dict(in_chans=1, embed_dim=4, depths=(1, 1, 1, 1), num_heads=(1, 1, 2, 2),
                 window_size=2, mlp_ratio=1.0),
}


def preset(name: str, **overrides) -> BackboneConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown backbone preset {name!r}; choose from {sorted(PRESETS)}")
    return BackboneConfig(**{**PRESETS[name], **overrides})


class DropPath(nn.Module):
    def __init__(self, p: float = 0.0):
        super().__init__()
        self.p = p

    def forward(self, x):
        if self.p == 0.0 or not self.training:
            return x
        keep = 1.0 - self.p
        shape = (x.shape[0],) + (1,) * (x.ndim - 1)
        return x * x.new_empty(shape).bernoulli_(keep) / keep


class Mlp(nn.Module):
    def __init__(self, dim, hidden, drop=0.0):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)
        self.drop = nn.Dropout(drop)

    def forward(self, x):
        return self.drop(self.fc2(self.drop(self.act(self.fc1(x)))))


def window_partition(x: torch.Tensor, ws: int) -> torch.Tensor:
    """(B, H, W, C) -> (B * nW, ws * ws, C); H and W must be multiples of ws."""
    B, H, W, C = x.shape
    x = x.view(B, H // ws, ws, W // ws, ws, C).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(-1, ws * ws, C)


def window_reverse(windows: torch.Tensor, ws: int, H: int, W: int) -> torch.Tensor:
    C = windows.shape[-1]
    x = windows.view(-1, H // ws, W // ws, ws, ws, C).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(-1, H, W, C)


def relative_position_index(ws: int) -> torch.Tensor:
    coords = torch.stack(torch.meshgrid(torch.arange(ws), torch.arange(ws), indexing="ij")).flatten(1)
    rel = (coords[:, :, None] - coords[:, None, :]).permute(1, 2, 0) + (ws - 1)
    return rel[..., 0] * (2 * ws - 1) + rel[..., 1]


def shifted_window_regions(Hp: int, Wp: int, ws: int, shift: int) -> torch.Tensor:
    """Region label per position of the (already rolled) padded grid."""
    labels = torch.zeros(Hp, Wp, dtype=torch.long)
    if shift == 0:
        return labels
    cuts = (slice(0, -ws), slice(-ws, -shift), slice(-shift, None))
    k = 0
    for hs in cuts:
        for wsl in cuts:
            labels[hs, wsl] = k
            k += 1
    return labels


def attention_mask(H: int, W: int, ws: int, shift: int, device=None, dtype=torch.float32):
    """Additive (nW, N, N) mask for a grid of H x W real tokens, or None if nothing is masked."""
    Hp, Wp = math.ceil(H / ws) * ws, math.ceil(W / ws) * ws
    if shift == 0 and Hp == H and Wp == W:
        return None
    valid = torch.zeros(Hp, Wp, dtype=torch.bool)
    valid[:H, :W] = True
    regions = shifted_window_regions(Hp, Wp, ws, shift)
    if shift:
        valid = torch.roll(valid, shifts=(-shift, -shift), dims=(0, 1))
    reg_w = window_partition(regions[None, :, :, None], ws)[..., 0]  # nW, N
    val_w = window_partition(valid[None, :, :, None].long(), ws)[..., 0].bool()
    allowed = (reg_w[:, :, None] == reg_w[:, None, :]) & val_w[:, None, :]
    mask = torch.zeros(allowed.shape, dtype=dtype, device=device)
    return mask.masked_fill(~allowed.to(device), MASK_VALUE)


class WindowAttention(nn.Module):
    """Multi-head self attention inside square windows with a learned relative position bias."""

    def __init__(self, dim, num_heads, window_size, qkv_bias=True, attn_drop=0.0, proj_drop=0.0):
        super().__init__()
        self.dim = dim
        self.num_heads = num_heads
        self.window_size = window_size
        self.scale = (dim // num_heads) ** -0.5
        self.relative_position_bias_table = nn.Parameter(
            torch.zeros((2 * window_size - 1) ** 2, num_heads))
        self.register_buffer("relative_position_index", relative_position_index(window_size),
                             persistent=False)
        self.qkv = nn.Linear(dim, dim * 3, bias=qkv_bias)
        self.attn_drop = nn.Dropout(attn_drop)
        self.proj = nn.Linear(dim, dim)
        self.proj_drop = nn.Dropout(proj_drop)
        nn.init.trunc_normal_(self.relative_position_bias_table, std=0.02)

    def relative_bias(self) -> torch.Tensor:
        N = self.window_size ** 2
        bias = self.relative_position_bias_table[self.relative_position_index.view(-1)]
        return bias.view(N, N, -1).permute(2, 0, 1)  # heads, N, N

    def forward(self, x, mask: Optional[torch.Tensor] = None, return_attn: bool = False):
        B_, N, C = x.shape
        qkv = self.qkv(x).reshape(B_, N, 3, self.num_heads, C // self.num_heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv.unbind(0)
        attn = (q * self.scale) @ k.transpose(-2, -1) + self.relative_bias().unsqueeze(0)
        if mask is not None:
            nW = mask.shape[0]
            attn = attn.view(B_ // nW, nW, self.num_heads, N, N) + mask.unsqueeze(1).unsqueeze(0)
            attn = attn.view(-1, self.num_heads, N, N)
        attn = attn.softmax(dim=-1)
        probs = attn
        attn = self.attn_drop(attn)
        x = (attn @ v).transpose(1, 2).reshape(B_, N, C)
        x = self.proj_drop(self.proj(x))
        return (x, probs) if return_attn else x


class SwinBlock(nn.Module):
    def __init__(self, dim, num_heads, window_size=7, shift_size=0, mlp_ratio=4.0,
                 qkv_bias=True, drop=0.0, attn_drop=0.0, drop_path=0.0):
        super().__init__()
        if not 0 <= shift_size < window_size:
            raise ConfigError("shift_size must lie in [0, window_size)")
        self.window_size = window_size
        self.shift_size = shift_size
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, num_heads, window_size, qkv_bias, attn_drop, drop)
        self.drop_path = DropPath(drop_path)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), drop)
        self._mask_cache: dict = {}

    def effective_shift(self, H: int, W: int) -> int:
        # a grid that fits in a single window gains nothing from shifting
        if H <= self.window_size and W <= self.window_size:
            return 0
        return self.shift_size

    def _mask(self, H, W, shift, x):
        key = (H, W, shift, x.device, x.dtype)
        if key not in self._mask_cache:
            self._mask_cache[key] = attention_mask(H, W, self.window_size, shift, x.device, x.dtype)
        return self._mask_cache[key]

    def attend(self, x: torch.Tensor, return_attn: bool = False):
        """Window attention on a normalized (B, H, W, C) grid, without residual."""
        B, H, W, C = x.shape
        ws = self.window_size
        shift = self.effective_shift(H, W)
        pad_b, pad_r = (-H) % ws, (-W) % ws
        if pad_b or pad_r:
            x = F.pad(x, (0, 0, 0, pad_r, 0, pad_b))
        Hp, Wp = H + pad_b, W + pad_r
        if shift:
            x = torch.roll(x, shifts=(-shift, -shift), dims=(1, 2))
        out = self.attn(window_partition(x, ws), self._mask(H, W, shift, x), return_attn=return_attn)
        out, probs = out if return_attn else (out, None)
        x = window_reverse(out, ws, Hp, Wp)
        if shift:
            x = torch.roll(x, shifts=(shift, shift), dims=(1, 2))
        x = x[:, :H, :W, :].contiguous()
        return (x, probs) if return_attn else x

    def forward(self, x):
        x = x + self.drop_path(self.attend(self.norm1(x)))
        return x + self.drop_path(self.mlp(self.norm2(x)))


class PatchEmbed(nn.Module):
    def __init__(self, patch_size=4, in_chans=1, embed_dim=96, norm=True):
        super().__init__()
        self.patch_size = patch_size
        self.proj = nn.Conv2d(in_chans, embed_dim, kernel_size=patch_size, stride=patch_size)
        self.norm = nn.LayerNorm(embed_dim) if norm else nn.Identity()

    def forward(self, x):
        """(B, C, H, W) image -> (B, H/p, W/p, D) token grid."""
        if x.ndim != 4 or x.shape[2] <= 0 or x.shape[3] <= 0:
            raise ShapeError(f"expected a non-empty (B, C, H, W) image, got {tuple(x.shape)}")
        if x.shape[1] != self.proj.in_channels:
            raise ShapeError(f"expected {self.proj.in_channels} channels, got {x.shape[1]}")
        p = self.patch_size
        pad_b, pad_r = (-x.shape[2]) % p, (-x.shape[3]) % p
        if pad_b or pad_r:
            x = F.pad(x, (0, pad_r, 0, pad_b))
        return self.norm(self.proj(x).permute(0, 2, 3, 1))


class PatchMerging(nn.Module):
    """2x2 neighbourhood concatenation followed by a linear 4C -> 2C reduction."""

    def __init__(self, dim):
        super().__init__()
        self.norm = nn.LayerNorm(4 * dim)
        self.reduction = nn.Linear(4 * dim, 2 * dim, bias=False)

    def forward(self, x):
        B, H, W, C = x.shape
        if H % 2 or W % 2:
            x = F.pad(x, (0, 0, 0, W % 2, 0, H % 2))
        x = torch.cat([x[:, 0::2, 0::2], x[:, 1::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 1::2]], dim=-1)
        return self.reduction(self.norm(x))


class Stage(nn.Module):
    def __init__(self, dim, depth, num_heads, window_size, mlp_ratio, qkv_bias, drop, attn_drop,
                 drop_path: Sequence[float], downsample: bool):
        super().__init__()
        self.blocks = nn.ModuleList([
            SwinBlock(dim, num_heads, window_size, 0 if i % 2 == 0 else window_size // 2,
                      mlp_ratio, qkv_bias, drop, attn_drop, drop_path[i])
            for i in range(depth)
        ])
        self.downsample = PatchMerging(dim) if downsample else None

    def forward(self, x):
        for blk in self.blocks:
            x = blk(x)
        return x


class SwinBackbone(nn.Module):
    """Four-stage encoder emitting feature maps at strides 4, 8, 16, 32 (for patch 4)."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        c = config
        self.patch_embed = PatchEmbed(c.patch_size, c.in_chans, c.embed_dim, c.patch_norm)
        self.pos_drop = nn.Dropout(c.drop_rate)
        self.mask_token = nn.Parameter(torch.zeros(1, 1, 1, c.embed_dim))
        dpr = torch.linspace(0, c.drop_path_rate, sum(c.depths)).tolist()
        self.layers = nn.ModuleList()
        for i in range(NUM_STAGES):
            lo = sum(c.depths[:i])
            self.layers.append(Stage(c.stage_channels[i], c.depths[i], c.num_heads[i], c.window_size,
                                     c.mlp_ratio, c.qkv_bias, c.drop_rate, c.attn_drop_rate,
                                     dpr[lo:lo + c.depths[i]], downsample=i < NUM_STAGES - 1))
        for i, ch in enumerate(c.stage_channels):
            self.add_module(f"norm{i}", nn.LayerNorm(ch))
        self.last_token_count = 0
        self.apply(_init_weights)
        nn.init.trunc_normal_(self.mask_token, std=0.02)

    @property
    def out_channels(self) -> tuple:
        return self.config.stage_channels

    @property
    def strides(self) -> tuple:
        return self.config.stage_strides

    def embed(self, images: torch.Tensor) -> torch.Tensor:
        return self.patch_embed(images)

    def attach_mask_tokens(self, tokens: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return attach_mask_tokens(tokens, mask, self.mask_token)

    def forward_tokens(self, tokens: torch.Tensor) -> list[torch.Tensor]:
        """Run the four stages on a (B, h, w, D) token grid; returns NCHW maps."""
        self.last_token_count = int(tokens.shape[1] * tokens.shape[2])
        x = self.pos_drop(tokens)
        outs = []
        for i, layer in enumerate(self.layers):
            x = layer(x)
            outs.append(getattr(self, f"norm{i}")(x).permute(0, 3, 1, 2).contiguous())
            if layer.downsample is not None:
                x = layer.downsample(x)
        return outs

    def forward_features(self, images: torch.Tensor, mask: Optional[torch.Tensor] = None):
        tokens = self.embed(images)
        if mask is not None:
            tokens = self.attach_mask_tokens(tokens, mask)
        return self.forward_tokens(tokens)

    def forward(self, images, mask=None):
        return self.forward_features(images, mask)


def attach_mask_tokens(tokens: torch.Tensor, mask: torch.Tensor, mask_token: torch.Tensor) -> torch.Tensor:
    """Replace tokens under masked units with ``mask_token``.

    ``mask`` is (B, gh, gw) over mask units; each unit must cover an integer
    block of tokens, e.g. 16 px units over 4 px patches give 4x4 blocks.
    """
    B, h, w, D = tokens.shape
    if mask.ndim != 3 or mask.shape[0] != B:
        raise ShapeError(f"mask must be (B, gh, gw) with B={B}, got {tuple(mask.shape)}")
    gh, gw = mask.shape[1:]
    if h % gh or w % gw or h // gh != w // gw:
        raise ShapeError(f"mask grid {gh}x{gw} does not tile token grid {h}x{w}")
    r = h // gh
    m = mask.to(tokens.dtype).repeat_interleave(r, 1).repeat_interleave(r, 2).unsqueeze(-1)
    return tokens * (1.0 - m) + mask_token.reshape(1, 1, 1, D).to(tokens.dtype) * m


def _init_weights(m):
    if isinstance(m, nn.Linear):
        nn.init.trunc_normal_(m.weight, std=0.02)
        if m.bias is not None:
            nn.init.zeros_(m.bias)
    elif isinstance(m, nn.LayerNorm):
        nn.init.ones_(m.weight)
        nn.init.zeros_(m.bias)


def build_backbone(config: BackboneConfig | str | dict) -> SwinBackbone:
    if isinstance(config, str):
        config = preset(config)
    elif isinstance(config, dict):
        config = BackboneConfig(**config)
    return SwinBackbone(config)
