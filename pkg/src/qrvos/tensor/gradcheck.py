"""Central finite-difference gradient checks."""
from __future__ import annotations

from typing import Callable, List, Optional, Sequence

import numpy as np

from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.linalg.norm(np.ravel(analytic - numeric))
    scale = max(np.linalg.norm(np.ravel(analytic)), np.linalg.norm(np.ravel(numeric)), 1e-12)
    return float(diff / scale)


def numerical_grad(fn: Callable[[], Tensor], x: Tensor, eps: float = 1e-3,
                   indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """d fn()/d x by central differences, optionally only at flat ``indices``."""
    flat = x.data.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = np.zeros(len(idx), dtype=np.float64)
    for n, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(fn().data)
        flat[i] = orig - eps
        lo = float(fn().data)
        flat[i] = orig
        out[n] = (hi - lo) / (2 * eps)
    return out if indices is not None else out.reshape(x.shape)


LADDER = (1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)


def settled_numerical_grad(fn: Callable[[], Tensor], x: Tensor, indices: Sequence[int],
                           steps: Sequence[float] = LADDER) -> np.ndarray:
    """Central differences over a ladder of step sizes, settled per entry.

    Each entry takes the middle estimate of the three consecutive steps whose
    estimates spread least. Large steps can straddle a ReLU kink and small
    ones drown a tiny gradient in round-off; two noisy estimates sometimes
    agree by chance, three rarely do. The pick never sees backprop.
    """
    est = np.stack([numerical_grad(fn, x, h, indices) for h in steps])
    windows = np.stack([est[k:k + 3] for k in range(len(steps) - 2)])
    spread = windows.max(axis=1) - windows.min(axis=1)
    pick = np.argmin(spread, axis=0) + 1
    return est[pick, np.arange(est.shape[1])]


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-3,
                    max_entries: Optional[int] = None, rng: Optional[np.random.Generator] = None
                    ) -> List[float]:
    """Compare backprop against central differences; returns one relative error per input.

    ``fn`` must rebuild the graph from ``inputs`` on every call. With
    ``max_entries`` only that many randomly chosen coordinates per input are
    probed.
    """
    for x in inputs:
        x.zero_grad()
    loss = fn()
    loss.backward()
    errors = []
    for x in inputs:
        analytic = x.grad.reshape(-1)
        if max_entries is not None and x.size > max_entries:
            rng = rng or np.random.default_rng(0)
            idx = np.sort(rng.choice(x.size, size=max_entries, replace=False))
        else:
            idx = np.arange(x.size)
        numeric = numerical_grad(fn, x, eps, indices=list(idx))
        errors.append(relative_error(analytic[idx], numeric))
    return errors


def check_directional(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-3,
                      rng: Optional[np.random.Generator] = None) -> float:
    """Compare ``grad . v`` against a central difference along a random unit direction ``v``."""
    rng = rng or np.random.default_rng(0)
    for x in inputs:
        x.zero_grad()
    fn().backward()
    dirs = [rng.standard_normal(x.shape) for x in inputs]
    norm = np.sqrt(sum(float(np.sum(d * d)) for d in dirs))
    dirs = [d / norm for d in dirs]
    analytic = sum(float(np.sum(x.grad * d)) for x, d in zip(inputs, dirs))
    saved = [x.data.copy() for x in inputs]
    for x, d, s in zip(inputs, dirs, saved):
        x.data[...] = s + eps * d
    hi = float(fn().data)
    for x, d, s in zip(inputs, dirs, saved):
        x.data[...] = s - eps * d
    lo = float(fn().data)
    for x, s in zip(inputs, saved):
        x.data[...] = s
    numeric = (hi - lo) / (2 * eps)
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)
