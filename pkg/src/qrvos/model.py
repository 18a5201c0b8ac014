"""The full referring segmentation network."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .cmfpn import DOWNSAMPLE_FACTORS, CrossModalFPN
from .data import VOCAB
from .dynamic_seg import assemble_mask_set, num_kernel_params
from .encoders import TextEncoder, TextFeatures, VisualEncoder
from .errors import ConfigError, DimensionError
from .tensor import Module, Tensor
from .transformer import CrossModalTransformer, HeadOutputs, PredictionHeads, QueryEmbeddings


@dataclass
class ModelConfig:
    dim: int = 256
    num_queries: int = 5
    heads: int = 8
    enc_layers: int = 4
    dec_layers: int = 4
    ffn_mult: int = 4
    mask_channels: int = 8
    num_classes: int = 1
    visual_widths: Tuple[int, ...] = (32, 64, 96, 128)
    text_embed_dim: int = 64
    text_pool: str = "mean"
    vocab_size: int = len(VOCAB)
    factors: Tuple[int, ...] = DOWNSAMPLE_FACTORS
    vl_fusion: bool = True
    rel_coords: bool = True
    temporal_attention: bool = True
    grouped_dynamic_conv: bool = True
    dtype: str = "float32"

    def validate(self) -> "ModelConfig":
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} is not divisible by {self.heads} heads")
        if self.dim % 4:
            raise ConfigError(f"dim {self.dim} must be divisible by 4 for the positional encoding")
        if self.num_queries < 1:
            raise ConfigError("num_queries must be >= 1")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        if len(self.visual_widths) != 4 or len(self.factors) != 4:
            raise ConfigError("need 4 visual widths and 4 downsample factors")
        if any(s < 1 for s in self.factors):
            raise ConfigError("downsample factors must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype {self.dtype}")
        return self

    @property
    def kernel_params(self) -> int:
        return num_kernel_params(self.mask_channels, self.rel_coords)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelOutput:
    logits: Tensor  # (T, N, K)
    boxes: Tensor  # (T, N, 4)
    kernels: Tensor  # (T, N, P)
    masks: Tensor  # (T, N, H/4, W/4) logits
    mask_features: Tensor  # (T, C_d, H/4, W/4)
    text: TextFeatures = field(repr=False)


class ReferringModel(Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config.validate()
        rng = np.random.default_rng(seed)
        dt = np.dtype(config.dtype).type
        w = config.visual_widths
        self.visual = VisualEncoder(rng, w, dtype=dt)
        self.text = TextEncoder(config.vocab_size, config.dim, rng, config.text_embed_dim, config.text_pool, dt)
        self.transformer = CrossModalTransformer(w[1:], config.dim, rng, config.heads, config.enc_layers,
                                                 config.dec_layers, config.ffn_mult, dt)
        self.queries = QueryEmbeddings(config.num_queries, config.dim, rng, dt)
        self.heads = PredictionHeads(config.dim, config.num_classes, config.kernel_params, rng, dt)
        self.cmfpn = CrossModalFPN([w[0]] + [config.dim] * 3, config.dim, config.mask_channels, rng,
                                   config.heads, config.factors, config.vl_fusion,
                                   config.temporal_attention, dt)

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def param_groups(self) -> Tuple[List, List]:
        """(visual backbone params, everything else)."""
        named = list(self.named_parameters())
        visual = [p for n, p in named if n.startswith("visual.")]
        rest = [p for n, p in named if not n.startswith("visual.")]
        return visual, rest

    def forward(self, frames, tokens, centers: Optional[np.ndarray] = None) -> ModelOutput:
        """``frames`` is (T, H, W, 3) in [0, 1] or an already channel-first tensor.

        ``centers`` overrides the box centres the relative coordinates are
        built from; the gradient check uses it to hold them fixed.
        """
        if not isinstance(frames, Tensor):
            arr = np.asarray(frames)
            if arr.ndim != 4 or arr.shape[-1] != 3:
                raise DimensionError(f"expected frames (T, H, W, 3), got {arr.shape}")
            frames = Tensor(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)).astype(self.dtype))
        text = self.text(tokens)
        pyramid = self.visual(frames)
        T = frames.shape[0]
        encoded = self.transformer(pyramid[1:], text.sentence, self.queries(T))
        heads: HeadOutputs = self.heads(encoded.embeddings)
        seg = self.cmfpn([pyramid[0]] + encoded.memory, text.valid_words())
        masks = assemble_mask_set(seg, heads.boxes, heads.kernels, self.config.rel_coords,
                                  self.config.grouped_dynamic_conv, centers)
        return ModelOutput(heads.logits, heads.boxes, heads.kernels, masks, seg, text)
