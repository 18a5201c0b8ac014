"""Instance-sequence matching and the training loss."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .errors import DimensionError
from .tensor import Tensor, no_grad
from .tensor import tensor as F

TERMS = ("cls", "l1", "giou", "dice", "mask_focal")


@dataclass(frozen=True)
class LossWeights:
    cls: float = 2.0
    l1: float = 5.0
    giou: float = 2.0
    dice: float = 5.0
    mask_focal: float = 2.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    dice_eps: float = 1.0

    def __post_init__(self):
        for name in TERMS:
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be nonnegative")


@dataclass
class Target:
    """Ground truth for one referent at mask-feature resolution."""

    visibility: np.ndarray  # (T,) in {0, 1}
    boxes: np.ndarray  # (T, 4), rows of invisible frames are ignored
    masks: np.ndarray  # (T, h, w) in {0, 1}
    label: int = 0

    @property
    def T(self) -> int:
        return len(self.visibility)


def downsample_mask(masks: np.ndarray, stride: int) -> np.ndarray:
    """Area-threshold downsampling: a cell is foreground if at least half of it is."""
    T, H, W = masks.shape
    if H % stride or W % stride:
        raise DimensionError(f"mask size {H}x{W} is not divisible by {stride}")
    cells = masks.reshape(T, H // stride, stride, W // stride, stride).astype(np.float64)
    return (cells.mean(axis=(2, 4)) >= 0.5).astype(np.float32)


def make_target(visibility, boxes, masks, stride: int = 4, label: int = 0) -> Target:
    vis = np.asarray(visibility, dtype=np.float32)
    b = np.nan_to_num(np.asarray(boxes, dtype=np.float32), nan=0.0)
    return Target(vis, b, downsample_mask(np.asarray(masks), stride), label)


# ------------------------------------------------------------------ terms
def focal_elementwise(logits: Tensor, targets, alpha: float = 0.25, gamma: float = 2.0) -> Tensor:
    t = np.asarray(targets, dtype=logits.dtype)
    if t.shape != logits.shape:
        raise DimensionError(f"focal: logits {logits.shape} vs targets {t.shape}")
    p = F.sigmoid(logits)
    log_p = F.log_sigmoid(logits)
    log_not_p = F.log_sigmoid(logits * -1.0)
    if gamma:
        pos = F.power(1.0 - p, gamma) * log_p
        neg = F.power(p, gamma) * log_not_p
    else:
        pos, neg = log_p, log_not_p
    return pos * Tensor(-alpha * t) + neg * Tensor(-(1.0 - alpha) * (1.0 - t))


def focal_loss(logits: Tensor, targets, alpha: float = 0.25, gamma: float = 2.0) -> Tensor:
    """Mean sigmoid focal loss."""
    return focal_elementwise(logits, targets, alpha, gamma).mean()


def _corners(b: Tensor):
    cx, cy, w, h = (b[..., k] for k in range(4))
    return cx - w * 0.5, cy - h * 0.5, cx + w * 0.5, cy + h * 0.5


def giou(a: Tensor, b: Tensor, tiny: float = 1e-12) -> Tensor:
    """Generalized IoU of (cx, cy, w, h) boxes over the last axis."""
    if a.shape != b.shape or a.shape[-1] != 4:
        raise DimensionError(f"giou: box shapes {a.shape} and {b.shape}")
    ax0, ay0, ax1, ay1 = _corners(a)
    bx0, by0, bx1, by1 = _corners(b)
    iw = F.relu(F.minimum(ax1, bx1) - F.maximum(ax0, bx0))
    ih = F.relu(F.minimum(ay1, by1) - F.maximum(ay0, by0))
    inter = iw * ih
    area_a = a[..., 2] * a[..., 3]
    area_b = b[..., 2] * b[..., 3]
    union = area_a + area_b - inter
    floor = Tensor(np.full(union.shape, tiny, dtype=union.dtype))
    iou = inter / F.maximum(union, floor)
    cw = F.maximum(ax1, bx1) - F.minimum(ax0, bx0)
    ch = F.maximum(ay1, by1) - F.minimum(ay0, by0)
    enclose = cw * ch
    return iou - (enclose - union) / F.maximum(enclose, floor)


def dice_loss(probs: Tensor, gt, eps: float = 1.0) -> Tensor:
    """One joint Dice loss over every element (all frames together)."""
    g = np.asarray(gt, dtype=probs.dtype)
    if g.shape != probs.shape:
        raise DimensionError(f"dice: prediction {probs.shape} vs target {g.shape}")
    inter = (probs * Tensor(g)).sum()
    return 1.0 - (inter * 2.0 + eps) / (probs.sum() + (float(g.sum()) + eps))


def class_targets(target: Target, positive: bool, K: int) -> np.ndarray:
    out = np.zeros((target.T, K), dtype=np.float32)
    if positive:
        out[:, target.label if K > 1 else 0] = target.visibility
    return out


def query_terms(logits: Tensor, boxes: Tensor, masks: Tensor, target: Target,
                weights: LossWeights = LossWeights(), positive: bool = True) -> Dict[str, Tensor]:
    """Weighted loss terms for one query's trajectory.

    ``logits`` (T, K), ``boxes`` (T, 4), ``masks`` (T, h, w) mask logits.
    Box and mask terms cover visible frames only; per-frame terms are summed
    and divided by T. Negatives get the classification term only.
    """
    T, K = logits.shape
    ct = class_targets(target, positive, K)
    terms = {"cls": focal_elementwise(logits, ct, weights.focal_alpha, weights.focal_gamma).sum() * (weights.cls / T)}
    if not positive:
        return terms
    idx = np.flatnonzero(target.visibility > 0)
    if len(idx) == 0:
        return terms
    pb = boxes[idx]
    tb = Tensor(target.boxes[idx].astype(boxes.dtype))
    terms["l1"] = (pb - tb).abs().sum() * (weights.l1 / T)
    terms["giou"] = (1.0 - giou(pb, tb)).sum() * (weights.giou / T)
    pm = masks[idx]
    tm = target.masks[idx]
    terms["dice"] = dice_loss(F.sigmoid(pm), tm, weights.dice_eps) * weights.dice
    terms["mask_focal"] = focal_loss(pm, tm, weights.focal_alpha, weights.focal_gamma) * weights.mask_focal
    return terms


def _detached(x: Tensor) -> Tensor:
    return Tensor(x.data)


def match_cost(logits: Tensor, boxes: Tensor, masks: Tensor, target: Target,
               weights: LossWeights = LossWeights()) -> float:
    with no_grad():
        terms = query_terms(_detached(logits), _detached(boxes), _detached(masks), target, weights)
        return float(sum(float(v.data) for v in terms.values()))


@dataclass
class MatchResult:
    positive: int
    costs: np.ndarray

    @property
    def negatives(self) -> List[int]:
        return [i for i in range(len(self.costs)) if i != self.positive]


def argmin_lowest(costs) -> int:
    """First index of the minimum (np.argmin already breaks ties this way)."""
    return int(np.argmin(np.asarray(costs)))


def find_positive(logits: Tensor, boxes: Tensor, masks: Tensor, target: Target,
                  weights: LossWeights = LossWeights()) -> MatchResult:
    """Cost of every query's trajectory; ``logits`` is (T, N, K), ``boxes`` (T, N, 4),
    ``masks`` (T, N, h, w)."""
    N = logits.shape[1]
    costs = np.array([match_cost(logits[:, i], boxes[:, i], masks[:, i], target, weights) for i in range(N)])
    return MatchResult(argmin_lowest(costs), costs)


@dataclass
class LossResult:
    total: Tensor
    breakdown: Dict[str, float]
    match: MatchResult
    terms: Dict[str, Tensor] = field(repr=False, default_factory=dict)


def total_loss(logits: Tensor, boxes: Tensor, masks: Tensor, target: Target,
               weights: LossWeights = LossWeights(), match: Optional[MatchResult] = None) -> LossResult:
    if match is None:
        match = find_positive(logits, boxes, masks, target, weights)
    i = match.positive
    terms = query_terms(logits[:, i], boxes[:, i], masks[:, i], target, weights, positive=True)
    neg = [query_terms(logits[:, j], boxes[:, j], masks[:, j], target, weights, positive=False)["cls"]
           for j in match.negatives]
    if neg:
        terms["cls"] = terms["cls"] + F.stack(neg).sum()
    total = None
    for v in terms.values():
        total = v if total is None else total + v
    breakdown = {name: float(terms[name].data) if name in terms else 0.0 for name in TERMS}
    breakdown["total"] = float(total.data)
    return LossResult(total, breakdown, match, terms)
