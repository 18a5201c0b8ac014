"""Parameter containers and the layers the model is assembled from."""
from __future__ import annotations

import math
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from ..errors import DimensionError
from . import tensor as F
from .tensor import Tensor


class Parameter(Tensor):
    """A leaf tensor that always requires grad."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    """Minimal module base: parameters and submodules are discovered from attributes."""

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Parameter):
                        yield f"{full}.{i}", item
                    elif isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise KeyError(f"state mismatch; missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in own.items():
            if name not in state:
                continue
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise DimensionError(f"{name}: checkpoint shape {arr.shape} != parameter shape {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng: np.random.Generator, bound: float, shape, dtype) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    """``y = x W + b`` over the last axis; weight stored as ``[in, out]``."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 bias: bool = True, dtype=np.float32, init: str = "xavier"):
        if init == "xavier":
            bound = math.sqrt(6.0 / (in_features + out_features))
        else:
            bound = 1.0 / math.sqrt(in_features)
        self.weight = Parameter(_uniform(rng, bound, (in_features, out_features), dtype))
        self.bias = Parameter(np.zeros(out_features, dtype=dtype)) if bias else None
        self.in_features = in_features
        self.out_features = out_features

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise DimensionError(f"Linear: expected last extent {self.in_features}, got {x.shape}")
        lead = x.shape[:-1]
        y = F.matmul(x.reshape(-1, self.in_features), self.weight)
        if self.bias is not None:
            y = y + self.bias.expand(y.shape)
        return y.reshape(lead + (self.out_features,))


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, bias: bool = True, dtype=np.float32):
        fan_in = in_ch * kernel * kernel
        bound = math.sqrt(6.0 / fan_in)  # He-uniform for ReLU stacks
        self.weight = Parameter(_uniform(rng, bound, (out_ch, in_ch, kernel, kernel), dtype))
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype)) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        self.weight = Parameter(np.ones(dim, dtype=dtype))
        self.bias = Parameter(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def forward(self, x: Tensor, axis: int = -1) -> Tensor:
        return F.layer_norm(x, self.weight, self.bias, axis=axis, eps=self.eps)


class GroupNorm(Module):
    """Normalize (N, C, H, W) maps over each group of channels and all pixels."""

    def __init__(self, groups: int, channels: int, dtype=np.float32, eps: float = 1e-5):
        if channels % groups:
            raise ValueError(f"{channels} channels do not split into {groups} groups")
        self.groups = groups
        self.weight = Parameter(np.ones(channels, dtype=dtype))
        self.bias = Parameter(np.zeros(channels, dtype=dtype))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        y = F.layer_norm(x.reshape(n, self.groups, -1), None, None, axis=-1, eps=self.eps).reshape(n, c, h, w)
        scale = self.weight.reshape(1, c, 1, 1).expand(x.shape)
        shift = self.bias.reshape(1, c, 1, 1).expand(x.shape)
        return y * scale + shift


class Embedding(Module):
    def __init__(self, num: int, dim: int, rng: np.random.Generator, dtype=np.float32):
        self.weight = Parameter(rng.normal(0.0, 1.0, size=(num, dim)).astype(dtype))

    def forward(self, indices) -> Tensor:
        return F.embedding(self.weight, indices)


class MLP(Module):
    """Stack of linear layers with ReLU between them (none after the last)."""

    def __init__(self, dims, rng: np.random.Generator, dtype=np.float32):
        self.layers = [Linear(a, b, rng, dtype=dtype) for a, b in zip(dims[:-1], dims[1:])]

    def forward(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = F.relu(x)
        return x


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tuple[Tensor, Tensor]:
    """Scaled dot-product attention over the last two axes.

    Returns the attended values and the attention weights.
    """
    d = q.shape[-1]
    logits = F.matmul(q, F.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(d))
    weights = F.softmax(logits, axis=-1)
    return F.matmul(weights, v), weights


class MultiHeadAttention(Module):
    """Multi-head attention on ``[B, L, C]`` sequences."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float32,
                 kdim: Optional[int] = None, bias: bool = True):
        if dim % heads:
            raise DimensionError(f"MultiHeadAttention: dim {dim} not divisible by {heads} heads")
        kdim = kdim or dim
        self.q_proj = Linear(dim, dim, rng, bias=bias, dtype=dtype)
        self.k_proj = Linear(kdim, dim, rng, bias=bias, dtype=dtype)
        self.v_proj = Linear(kdim, dim, rng, bias=bias, dtype=dtype)
        self.out_proj = Linear(dim, dim, rng, bias=bias, dtype=dtype)
        self.heads = heads
        self.dim = dim
        self.last_weights: Optional[np.ndarray] = None

    def _split(self, x: Tensor) -> Tensor:
        B, L, _ = x.shape
        return x.reshape(B, L, self.heads, self.dim // self.heads).transpose(0, 2, 1, 3)

    def forward(self, query: Tensor, key: Tensor, value: Tensor) -> Tensor:
        q = self._split(self.q_proj(query))
        k = self._split(self.k_proj(key))
        v = self._split(self.v_proj(value))
        out, w = attention(q, k, v)
        self.last_weights = w.data
        B, _, Lq, _ = out.shape
        out = out.transpose(0, 2, 1, 3).reshape(B, Lq, self.dim)
        return self.out_proj(out)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        self.fc1 = Linear(dim, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, dim, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(F.relu(self.fc1(x)))
