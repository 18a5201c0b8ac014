"""Small trainable stand-ins for the visual and linguistic backbones."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .errors import ConfigError, DataError, DimensionError
from .tensor import Conv2d, Embedding, LayerNorm, Linear, Module, Tensor
from .tensor import tensor as F

STRIDES = (4, 8, 16, 32)


class VisualEncoder(Module):
    """Four strided conv stages producing features at strides 4, 8, 16 and 32.

    Each conv is followed by ReLU and a channel-wise layer norm. The first
    stage uses two stride-2 convs. Frames are the batch axis and never mix.
    """

    def __init__(self, rng: np.random.Generator, widths: Sequence[int] = (32, 64, 96, 128),
                 dtype=np.float32):
        if len(widths) != 4:
            raise ConfigError(f"need 4 stage widths, got {widths}")
        self.widths = tuple(widths)
        self.stem = Conv2d(3, widths[0], 3, rng, stride=2, padding=1, dtype=dtype)
        self.stem_norm = LayerNorm(widths[0], dtype=dtype)
        ins = (widths[0],) + tuple(widths[:-1])
        self.convs = [Conv2d(i, o, 3, rng, stride=2, padding=1, dtype=dtype) for i, o in zip(ins, widths)]
        self.norms = [LayerNorm(o, dtype=dtype) for o in widths]

    def forward(self, frames: Tensor) -> List[Tensor]:
        if frames.ndim != 4 or frames.shape[1] != 3:
            raise DimensionError(f"expected frames of shape (T, 3, H, W), got {frames.shape}")
        H, W = frames.shape[2:]
        if H % 32 or W % 32:
            raise ConfigError(f"frame size {H}x{W} is not a multiple of 32")
        x = self.stem_norm(F.relu(self.stem(frames)), axis=1)
        levels = []
        for conv, norm in zip(self.convs, self.norms):
            x = norm(F.relu(conv(x)), axis=1)
            levels.append(x)
        return levels


@dataclass
class TextFeatures:
    words: Tensor  # (L, C), every position including padding
    valid: np.ndarray  # (L,) bool
    sentence: Tensor  # (C,)

    @property
    def length(self) -> int:
        return int(self.valid.sum())

    def valid_words(self) -> Tensor:
        idx = np.flatnonzero(self.valid)
        if len(idx) == len(self.valid):
            return self.words
        return self.words[idx]


class TextEncoder(Module):
    """Word embeddings followed by two linear layers and a layer norm.

    No positional information is used, so a word's feature depends only on the
    word itself. The sentence feature pools the non-padding words.
    """

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator, embed_dim: int = 64,
                 pool: str = "mean", dtype=np.float32):
        if pool not in ("mean", "max"):
            raise ConfigError(f"unknown text pooling {pool!r}")
        self.vocab_size = vocab_size
        self.embed = Embedding(vocab_size, embed_dim, rng, dtype=dtype)
        self.fc1 = Linear(embed_dim, dim, rng, dtype=dtype)
        self.fc2 = Linear(dim, dim, rng, dtype=dtype)
        self.norm = LayerNorm(dim, dtype=dtype)
        self.pool = pool

    def forward(self, tokens) -> TextFeatures:
        tokens = np.asarray(tokens, dtype=np.int64).reshape(-1)
        if tokens.size == 0:
            raise DataError("empty token sequence")
        if tokens.min() < 0 or tokens.max() >= self.vocab_size:
            raise DataError(f"token index out of vocabulary range [0, {self.vocab_size})")
        valid = tokens != 0
        if not valid.any():
            raise DataError("token sequence contains only padding")
        h = self.embed(tokens)
        words = self.norm(self.fc2(F.relu(self.fc1(h))))
        L, C = words.shape
        if self.pool == "mean":
            w = Tensor(np.broadcast_to(valid[:, None], (L, C)).astype(words.dtype))
            sentence = (words * w).sum(axis=0) * (1.0 / valid.sum())
        else:
            sentence = words[np.flatnonzero(valid)].max(axis=0)
        return TextFeatures(words, valid, sentence)
