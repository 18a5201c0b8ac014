"""Cross-modal feature pyramid producing the stride-4 mask features."""
from __future__ import annotations

import math
from typing import Sequence, Tuple

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import Conv2d, GroupNorm, LayerNorm, Linear, Module, MultiHeadAttention, Tensor
from .tensor import tensor as F
from .transformer import flatten_tokens, positional_encoding_2d, unflatten_tokens

DOWNSAMPLE_FACTORS = (8, 4, 2, 1)


def spatial_reduce(f: Tensor, sigma: int) -> Tensor:
    if sigma < 1:
        raise ConfigError(f"downsample factor must be >= 1, got {sigma}")
    if sigma == 1:
        return f
    h, w = f.shape[-2:]
    return F.bilinear_resize(f, math.ceil(h / sigma), math.ceil(w / sigma))


def spatial_recover(f: Tensor, size: Tuple[int, int]) -> Tensor:
    return F.bilinear_resize(f, size[0], size[1])


class SpatioTemporalAttention(Module):
    """Self-attention over every pixel of every frame at once.

    Only a 2D spatial encoding is added, so the block is equivariant to frame
    order.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        self.attn = MultiHeadAttention(dim, heads, rng, dtype=dtype)
        self.norm = LayerNorm(dim, dtype=dtype)
        self.dim = dim

    def update(self, f: Tensor) -> Tensor:
        """Attention output for (T, C, h, w) features, before the residual."""
        T, C, h, w = f.shape
        pe = positional_encoding_2d(h, w, C, f.dtype)
        tokens = flatten_tokens(f).reshape(1, T * h * w, C)
        pos = np.broadcast_to(pe.reshape(C, h * w).T[None], (T, h * w, C)).reshape(1, T * h * w, C)
        qk = tokens + Tensor(np.ascontiguousarray(pos))
        out = self.attn(qk, qk, tokens)
        return unflatten_tokens(out.reshape(T, h * w, C), h, w)

    def forward(self, f: Tensor) -> Tensor:
        return self.norm(f + self.update(f), axis=1)

    def reduced(self, f: Tensor, sigma: int) -> Tensor:
        """Attend on the reduced map; the residual is taken at full resolution.

        With sigma=1 this is exactly ``forward``.
        """
        upd = self.update(spatial_reduce(f, sigma))
        if sigma > 1:
            upd = spatial_recover(upd, f.shape[-2:])
        return self.norm(f + upd, axis=1)


class LanguageCrossAttention(Module):
    """Pixels attend to words; the attended values are added back to the pixels.

    All projections are bias-free, so zero word features leave the pixels as
    they were.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        self.attn = MultiHeadAttention(dim, heads, rng, dtype=dtype, bias=False)

    def forward(self, f: Tensor, words: Tensor) -> Tensor:
        T, C, h, w = f.shape
        if words.ndim != 2 or words.shape[1] != C:
            raise DimensionError(f"word features {words.shape} do not match pixel width {C}")
        pix = flatten_tokens(f)
        keys = words.reshape(1, *words.shape).expand((T,) + words.shape)
        return unflatten_tokens(pix + self.attn(pix, keys, keys), h, w)

    @property
    def last_weights(self):
        return self.attn.last_weights


class CrossModalFPN(Module):
    """Per-level fusion, standard top-down merge and a normalized 3x3 conv to the mask features.

    ``levels`` are ordered from stride 4 to stride 32.
    """

    def __init__(self, in_channels: Sequence[int], dim: int, out_channels: int, rng: np.random.Generator,
                 heads: int = 8, factors: Sequence[int] = DOWNSAMPLE_FACTORS, vl_fusion: bool = True,
                 temporal_attention: bool = True, dtype=np.float32):
        if len(factors) != len(in_channels):
            raise ConfigError("need one downsample factor per level")
        self.factors = tuple(int(s) for s in factors)
        self.vl_fusion = vl_fusion
        self.temporal_attention = temporal_attention
        self.lateral = [Conv2d(c, dim, 1, rng, dtype=dtype) for c in in_channels]
        self.mhsa = [SpatioTemporalAttention(dim, heads, rng, dtype) for _ in in_channels]
        self.cross = [LanguageCrossAttention(dim, heads, rng, dtype) for _ in in_channels]
        self.output = Conv2d(dim, out_channels, 3, rng, padding=1, dtype=dtype)
        # bounded mask features keep the dynamic-convolution ReLUs from dying
        self.output_norm = GroupNorm(out_channels, out_channels, dtype=dtype)

    def forward(self, levels: Sequence[Tensor], words: Tensor) -> Tensor:
        frames = {f.shape[0] for f in levels}
        if len(frames) != 1:
            raise DimensionError(f"pyramid levels disagree on frame count: {sorted(frames)}")
        fused = []
        for f, proj, mhsa, cross, sigma in zip(levels, self.lateral, self.mhsa, self.cross, self.factors):
            f = proj(f)
            if self.temporal_attention:
                f = mhsa.reduced(f, sigma)
            if self.vl_fusion:
                f = cross(f, words)
            fused.append(f)
        x = fused[-1]
        for f in reversed(fused[:-1]):
            x = f + F.bilinear_resize(x, *f.shape[-2:])
        return self.output_norm(self.output(x))
