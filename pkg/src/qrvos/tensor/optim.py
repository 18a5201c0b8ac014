"""AdamW with decoupled weight decay and per-group learning rates."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigError
from .tensor import Tensor


def adamw_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], m: Sequence[np.ndarray],
               v: Sequence[np.ndarray], step: int, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
               weight_decay: float = 0.0) -> None:
    """Update ``params`` in place. ``m``/``v`` are the moment buffers, ``step`` is 1-based."""
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    b1, b2 = betas
    bc1 = 1.0 - b1**step
    bc2 = 1.0 - b2**step
    for p, g, mi, vi in zip(params, grads, m, v):
        if g is None:  # not reached by the last backward pass
            continue
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        mi *= b1
        mi += (1.0 - b1) * g
        vi *= b2
        vi += (1.0 - b2) * g * g
        denom = np.sqrt(vi / bc2) + eps
        p -= (lr / bc1) * mi / denom


@dataclass
class ParamGroup:
    params: List[Tensor]
    lr: float
    weight_decay: float = 0.0


class AdamW:
    def __init__(self, groups: Sequence[ParamGroup], betas: Tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8):
        for g in groups:
            if g.lr <= 0:
                raise ConfigError(f"learning rate must be positive, got {g.lr}")
        self.groups = list(groups)
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self._m = [[np.zeros_like(p.data) for p in g.params] for g in self.groups]
        self._v = [[np.zeros_like(p.data) for p in g.params] for g in self.groups]
        self.lr_scale = 1.0

    def zero_grad(self) -> None:
        for g in self.groups:
            for p in g.params:
                p.zero_grad()

    def step(self) -> None:
        self.step_count += 1
        for g, m, v in zip(self.groups, self._m, self._v):
            adamw_step([p.data for p in g.params], [p.grad for p in g.params], m, v,
                       self.step_count, g.lr * self.lr_scale, self.betas, self.eps, g.weight_decay)


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Scale gradients so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    params = [p for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for p in params:
            p.grad *= scale
    return total
