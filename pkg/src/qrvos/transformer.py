"""Early language fusion, the encoder/decoder stack and the prediction heads."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import (
    MLP,
    Conv2d,
    FeedForward,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    Parameter,
    Tensor,
)
from .tensor import tensor as F


def positional_encoding_2d(h: int, w: int, dim: int, dtype=np.float32) -> np.ndarray:
    """Fixed sine/cosine encoding of shape (dim, h, w).

    The first half of the channels encodes the row index, the second half the
    column index. Within each half, even channels are sines and odd channels
    cosines of the index scaled by 10000-base frequencies.
    """
    if dim % 4:
        raise ConfigError(f"positional encoding width {dim} is not divisible by 4")
    half = dim // 2
    i = np.arange(half)
    freq = 10000.0 ** (2 * (i // 2) / half)
    ys = np.arange(h, dtype=np.float64)[:, None] / freq  # (h, half)
    xs = np.arange(w, dtype=np.float64)[:, None] / freq  # (w, half)
    ys = np.where(i % 2 == 0, np.sin(ys), np.cos(ys))
    xs = np.where(i % 2 == 0, np.sin(xs), np.cos(xs))
    pe = np.concatenate(
        [np.broadcast_to(ys.T[:, :, None], (half, h, w)), np.broadcast_to(xs.T[:, None, :], (half, h, w))]
    )
    return pe.astype(dtype)


def flatten_tokens(x: Tensor) -> Tensor:
    """(B, C, h, w) -> (B, h*w, C)."""
    B, C, h, w = x.shape
    return x.reshape(B, C, h * w).transpose(0, 2, 1)


def unflatten_tokens(x: Tensor, h: int, w: int) -> Tensor:
    B, L, C = x.shape
    return x.transpose(0, 2, 1).reshape(B, C, h, w)


class SentenceGate(Module):
    """Projects the sentence feature to a per-channel gate in (-1, 1)."""

    def __init__(self, dim: int, rng: np.random.Generator, dtype=np.float32):
        self.proj = Linear(dim, dim, rng, dtype=dtype)

    def forward(self, sentence: Tensor) -> Tensor:
        return F.tanh(self.proj(sentence.reshape(1, -1))).reshape(-1)


def early_fuse(levels: Sequence[Tensor], gate: Tensor) -> List[Tensor]:
    """Multiply every pixel feature by the same channel gate."""
    out = []
    for f in levels:
        if f.ndim != 4 or f.shape[1] != gate.shape[0]:
            raise DimensionError(f"cannot gate features {f.shape} with a {gate.shape} gate")
        out.append(f * gate.reshape(1, -1, 1, 1).expand(f.shape))
    return out


class EncoderLayer(Module):
    def __init__(self, dim: int, heads: int, ffn: int, rng: np.random.Generator, dtype=np.float32):
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.attn = MultiHeadAttention(dim, heads, rng, dtype=dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.ffn = FeedForward(dim, ffn, rng, dtype=dtype)

    def forward(self, x: Tensor, pos: Tensor) -> Tensor:
        h = self.norm1(x)
        qk = h + pos
        x = x + self.attn(qk, qk, h)
        return x + self.ffn(self.norm2(x))


class DecoderLayer(Module):
    def __init__(self, dim: int, heads: int, ffn: int, rng: np.random.Generator, dtype=np.float32):
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.self_attn = MultiHeadAttention(dim, heads, rng, dtype=dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.cross_attn = MultiHeadAttention(dim, heads, rng, dtype=dtype)
        self.norm3 = LayerNorm(dim, dtype=dtype)
        self.ffn = FeedForward(dim, ffn, rng, dtype=dtype)

    def forward(self, tgt: Tensor, query_pos: Tensor, memory: Tensor, memory_pos: Tensor) -> Tensor:
        h = self.norm1(tgt)
        qk = h + query_pos
        tgt = tgt + self.self_attn(qk, qk, h)
        h = self.norm2(tgt)
        tgt = tgt + self.cross_attn(h + query_pos, memory + memory_pos, memory)
        return tgt + self.ffn(self.norm3(tgt))


class Encoder(Module):
    def __init__(self, dim: int, heads: int, ffn: int, layers: int, rng: np.random.Generator, dtype=np.float32):
        self.layers = [EncoderLayer(dim, heads, ffn, rng, dtype) for _ in range(layers)]
        self.norm = LayerNorm(dim, dtype=dtype)

    def forward(self, x: Tensor, pos: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x, pos)
        return self.norm(x)


class Decoder(Module):
    def __init__(self, dim: int, heads: int, ffn: int, layers: int, rng: np.random.Generator, dtype=np.float32):
        self.layers = [DecoderLayer(dim, heads, ffn, rng, dtype) for _ in range(layers)]
        self.norm = LayerNorm(dim, dtype=dtype)

    def forward(self, tgt: Tensor, query_pos: Tensor, memory: Tensor, memory_pos: Tensor) -> Tensor:
        for layer in self.layers:
            tgt = layer(tgt, query_pos, memory, memory_pos)
        return self.norm(tgt)


class QueryEmbeddings(Module):
    """N learnable query position embeddings, shared by every frame."""

    def __init__(self, num: int, dim: int, rng: np.random.Generator, dtype=np.float32):
        if num < 1:
            raise ConfigError("need at least one query")
        self.embed = Parameter(rng.normal(0.0, 1.0, size=(num, dim)).astype(dtype))

    @property
    def num(self) -> int:
        return self.embed.shape[0]

    def forward(self, frames: int) -> Tensor:
        return self.embed.reshape(1, self.num, -1).expand((frames, self.num, self.embed.shape[1]))


@dataclass
class EncodedClip:
    memory: List[Tensor]  # per level (T, C, h, w), strides 8, 16, 32
    embeddings: Tensor  # (T, N, C)


class CrossModalTransformer(Module):
    """Projects the stride-8/16/32 features, gates them with the sentence, encodes
    each frame's multi-scale tokens and decodes conditional queries per frame."""

    def __init__(self, in_channels: Sequence[int], dim: int, rng: np.random.Generator, heads: int = 8,
                 enc_layers: int = 4, dec_layers: int = 4, ffn_mult: int = 4, dtype=np.float32):
        self.dim = dim
        self.input_proj = [Conv2d(c, dim, 1, rng, dtype=dtype) for c in in_channels]
        self.gate = SentenceGate(dim, rng, dtype=dtype)
        self.level_embed = Parameter(rng.normal(0.0, 1.0, size=(len(in_channels), dim)).astype(dtype))
        self.encoder = Encoder(dim, heads, ffn_mult * dim, enc_layers, rng, dtype)
        self.decoder = Decoder(dim, heads, ffn_mult * dim, dec_layers, rng, dtype)

    def memory_positions(self, shapes: Sequence[Tuple[int, int]], frames: int) -> Tensor:
        parts = []
        for lvl, (h, w) in enumerate(shapes):
            pe = positional_encoding_2d(h, w, self.dim, self.level_embed.dtype).reshape(self.dim, h * w).T
            parts.append(Tensor(pe) + self.level_embed[lvl].reshape(1, -1).expand((h * w, self.dim)))
        pos = F.concat(parts, axis=0)
        return pos.reshape(1, *pos.shape).expand((frames,) + pos.shape)

    def forward(self, levels: Sequence[Tensor], sentence: Tensor, queries: Tensor) -> EncodedClip:
        if len(levels) != len(self.input_proj):
            raise DimensionError(f"expected {len(self.input_proj)} levels, got {len(levels)}")
        T = levels[0].shape[0]
        projected = [proj(f) for proj, f in zip(self.input_proj, levels)]
        fused = early_fuse(projected, self.gate(sentence))
        shapes = [f.shape[2:] for f in fused]
        tokens = F.concat([flatten_tokens(f) for f in fused], axis=1)
        pos = self.memory_positions(shapes, T)
        memory = self.encoder(tokens, pos)

        N = queries.shape[1]
        content = sentence.reshape(1, 1, -1).expand((T, N, self.dim))
        embeddings = self.decoder(content, queries, memory, pos)

        out, start = [], 0
        for h, w in shapes:
            out.append(unflatten_tokens(memory[:, start:start + h * w], h, w))
            start += h * w
        return EncodedClip(out, embeddings)


@dataclass
class HeadOutputs:
    logits: Tensor  # (T, N, K)
    boxes: Tensor  # (T, N, 4) cx, cy, w, h in [0, 1]
    kernels: Tensor  # (T, N, P)


class PredictionHeads(Module):
    def __init__(self, dim: int, num_classes: int, kernel_params: int, rng: np.random.Generator,
                 dtype=np.float32, prior: float = 0.01):
        self.cls = Linear(dim, num_classes, rng, dtype=dtype)
        # start the class scores near a small prior, as is usual with focal loss
        self.cls.bias.data[:] = -np.log((1 - prior) / prior)
        self.box = MLP([dim, dim, dim, 4], rng, dtype=dtype)
        self.kernel = MLP([dim, dim, dim, kernel_params], rng, dtype=dtype)
        # small generated kernels keep the dynamic ReLUs alive early in training
        last = self.kernel.layers[-1]
        last.weight.data[:] = rng.normal(0.0, 0.01, size=last.weight.shape)

    def forward(self, embeddings: Tensor) -> HeadOutputs:
        return HeadOutputs(self.cls(embeddings), F.sigmoid(self.box(embeddings)), self.kernel(embeddings))
