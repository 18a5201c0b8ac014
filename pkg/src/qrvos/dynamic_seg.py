"""Per-query masks from dynamic 1x1 convolutions over the mask features."""
from __future__ import annotations

from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import DimensionError
from .tensor import Tensor
from .tensor import tensor as F

HIDDEN = 8


def kernel_layout(feature_channels: int = 8, rel_coords: bool = True,
                  hidden: int = HIDDEN) -> List[Tuple[str, int, Tuple[int, ...]]]:
    """(name, offset, shape) for each slice of a flat kernel vector.

    Weights are stored as (out, in) so a slice reshapes directly into a
    1x1 conv weight.
    """
    cin = feature_channels + (2 if rel_coords else 0)
    shapes = [("w1", (hidden, cin)), ("b1", (hidden,)), ("w2", (hidden, hidden)), ("b2", (hidden,)),
              ("w3", (1, hidden)), ("b3", (1,))]
    out, off = [], 0
    for name, shape in shapes:
        out.append((name, off, shape))
        off += int(np.prod(shape))
    return out


def num_kernel_params(feature_channels: int = 8, rel_coords: bool = True, hidden: int = HIDDEN) -> int:
    name, off, shape = kernel_layout(feature_channels, rel_coords, hidden)[-1]
    return off + int(np.prod(shape))


def build_rel_coords(cx: float, cy: float, h: int, w: int, dtype=np.float32) -> np.ndarray:
    """Offsets of every pixel centre from the kernel centre, in normalized units."""
    xs = (np.arange(w) + 0.5) / w - cx
    ys = (np.arange(h) + 0.5) / h - cy
    return np.stack([np.broadcast_to(xs[None, :], (h, w)), np.broadcast_to(ys[:, None], (h, w))]).astype(dtype)


def _split(kernels: Tensor, layout) -> Dict[str, Tensor]:
    lead = kernels.shape[:-1]
    return {name: kernels[(..., slice(off, off + int(np.prod(shape))))].reshape(lead + shape)
            for name, off, shape in layout}


def dynamic_convolve(features: Tensor, rel: Optional[np.ndarray], kernel: Tensor) -> Tensor:
    """One query on one frame: (C_d, h, w) features -> (h, w) logits."""
    C, h, w = features.shape
    layout = kernel_layout(C, rel is not None)
    expected = num_kernel_params(C, rel is not None)
    if kernel.shape != (expected,):
        raise DimensionError(f"kernel has shape {kernel.shape}, expected ({expected},)")
    x = features if rel is None else F.concat([features, Tensor(rel.astype(features.dtype))], axis=0)
    p = _split(kernel, layout)
    x = x.reshape(1, -1, h, w)
    x = F.relu(F.conv2d(x, p["w1"].reshape(HIDDEN, -1, 1, 1), p["b1"]))
    x = F.relu(F.conv2d(x, p["w2"].reshape(HIDDEN, HIDDEN, 1, 1), p["b2"]))
    x = F.conv2d(x, p["w3"].reshape(1, HIDDEN, 1, 1), p["b3"])
    return x.reshape(h, w)


def _rel_coords_for(centers: np.ndarray, h: int, w: int, dtype) -> np.ndarray:
    T, N = centers.shape[:2]
    out = np.empty((T, N, 2, h, w), dtype=dtype)
    for t in range(T):
        for i in range(N):
            out[t, i] = build_rel_coords(centers[t, i, 0], centers[t, i, 1], h, w, dtype)
    return out


def assemble_mask_set(features: Tensor, boxes: Tensor, kernels: Tensor, rel_coords: bool = True,
                      grouped: bool = True, centers: Optional[np.ndarray] = None) -> Tensor:
    """Mask logits (T, N, h, w) for every query on every frame.

    ``grouped`` runs all T*N kernels as a single grouped convolution per
    layer; otherwise each (frame, query) pair is convolved separately. Box
    centres used for the relative coordinates are taken without gradient;
    ``centers`` (T, N, 2) replaces them when given.
    """
    T, C, h, w = features.shape
    if kernels.ndim != 3 or kernels.shape[0] != T:
        raise DimensionError(f"kernels {kernels.shape} do not match {T} frames")
    N = kernels.shape[1]
    if centers is None:
        centers = boxes.data[..., :2]
    rel = _rel_coords_for(np.asarray(centers), h, w, features.dtype) if rel_coords else None
    if not grouped:
        rows = []
        for t in range(T):
            ft = features[t]
            rows.append(F.stack([dynamic_convolve(ft, None if rel is None else rel[t, i], kernels[t, i])
                                 for i in range(N)]))
        return F.stack(rows)

    layout = kernel_layout(C, rel_coords)
    if kernels.shape[2] != num_kernel_params(C, rel_coords):
        raise DimensionError(f"kernel length {kernels.shape[2]} does not match the layout")
    cin = C + (2 if rel_coords else 0)
    x = features.reshape(T, 1, C, h, w).expand((T, N, C, h, w))
    if rel is not None:
        x = F.concat([x, Tensor(rel)], axis=2)
    x = x.reshape(1, T * N * cin, h, w)
    p = _split(kernels, layout)
    G = T * N
    x = F.relu(F.conv2d(x, p["w1"].reshape(G * HIDDEN, cin, 1, 1), p["b1"].reshape(-1), groups=G))
    x = F.relu(F.conv2d(x, p["w2"].reshape(G * HIDDEN, HIDDEN, 1, 1), p["b2"].reshape(-1), groups=G))
    x = F.conv2d(x, p["w3"].reshape(G, HIDDEN, 1, 1), p["b3"].reshape(-1), groups=G)
    return x.reshape(T, N, h, w)
