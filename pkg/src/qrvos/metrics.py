"""Region and contour accuracy, precision at thresholds, IoU summaries and mAP."""
from __future__ import annotations

import csv
import io
import math
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError, DimensionError

K_THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)
MAP_THRESHOLDS = tuple((50 + 5 * k) / 100 for k in range(10))
REPORT_COLUMNS = (
    "J", "F", "J&F", "P@0.5", "P@0.6", "P@0.7", "P@0.8", "P@0.9", "overall_iou", "mean_iou", "mAP",
)


def _check_pair(pred: np.ndarray, gt: np.ndarray):
    pred, gt = np.asarray(pred).astype(bool), np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise DimensionError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return pred, gt


def iou(pred, gt) -> float:
    """Intersection over union; two empty masks count as a perfect match."""
    pred, gt = _check_pair(pred, gt)
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def boundary(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with at least one 4-neighbour in the background.

    Pixels outside the image count as background.
    """
    m = np.asarray(mask).astype(bool)
    interior = ndimage.binary_erosion(m, structure=ndimage.generate_binary_structure(2, 1), border_value=0)
    return m & ~interior


def default_tolerance(shape) -> int:
    h, w = shape[-2:]
    return max(1, math.ceil(0.008 * math.hypot(h, w)))


def _near(points: np.ndarray, reference: np.ndarray, tol: float) -> np.ndarray:
    """Which ``points`` lie within Euclidean distance ``tol`` of any reference pixel."""
    dist = ndimage.distance_transform_edt(~reference)
    return points & (dist <= tol)


def contour_f(pred, gt, tol: Optional[float] = None) -> float:
    """Boundary F-measure.

    A boundary pixel counts as matched when a boundary pixel of the other mask
    lies within ``tol``. Matching is not one-to-one.
    """
    pred, gt = _check_pair(pred, gt)
    if tol is None:
        tol = default_tolerance(pred.shape)
    bp, bg = boundary(pred), boundary(gt)
    np_, ng = bp.sum(), bg.sum()
    if np_ == 0 and ng == 0:
        return 1.0
    if np_ == 0 or ng == 0:
        return 0.0
    precision = _near(bp, bg, tol).sum() / np_
    recall = _near(bg, bp, tol).sum() / ng
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def precision_at_k(ious: Sequence[float], k: float) -> float:
    if not any(abs(k - t) < 1e-9 for t in K_THRESHOLDS):
        raise ConfigError(f"threshold {k} is not one of {K_THRESHOLDS}")
    ious = np.asarray(ious, dtype=np.float64)
    if ious.size == 0:
        return 0.0
    return float(np.mean(ious > k))


def map_5095(ious: Sequence[float]) -> float:
    """Mean over IoU thresholds 0.50:0.05:0.95 of the hit rate.

    With a single scored prediction per sample, average precision at a
    threshold is exactly the fraction of samples that reach it.
    """
    ious = np.asarray(ious, dtype=np.float64)
    if ious.size == 0:
        return 0.0
    # small slack so a threshold like 0.7 is reached by an IoU of exactly 0.7
    return float(np.mean([np.mean(ious >= t - 1e-12) for t in MAP_THRESHOLDS]))


def sample_scores(pred: np.ndarray, gt: np.ndarray, tol: Optional[float] = None) -> Dict[str, object]:
    """Per-frame IoU and F plus the accumulated intersection and union of one clip."""
    pred, gt = _check_pair(pred, gt)
    if pred.ndim != 3:
        raise DimensionError(f"expected (T, H, W) masks, got {pred.shape}")
    frame_iou = [iou(p, g) for p, g in zip(pred, gt)]
    frame_f = [contour_f(p, g, tol) for p, g in zip(pred, gt)]
    return {
        "frame_iou": frame_iou,
        "frame_f": frame_f,
        "iou": float(np.mean(frame_iou)),
        "f": float(np.mean(frame_f)),
        "intersection": int(np.logical_and(pred, gt).sum()),
        "union": int(np.logical_or(pred, gt).sum()),
    }


def evaluate_dataset(predictions: Mapping[str, np.ndarray], ground_truth: Mapping[str, np.ndarray],
                     tol: Optional[float] = None) -> Dict[str, float]:
    """Aggregate report over aligned samples; keys follow ``REPORT_COLUMNS``.

    A clip's IoU is the mean of its frame IoUs. Overall IoU accumulates
    intersections and unions across every frame of every clip.
    """
    missing_pred = sorted(set(ground_truth) - set(predictions))
    missing_gt = sorted(set(predictions) - set(ground_truth))
    if missing_pred or missing_gt:
        raise DataError(f"unaligned samples; no prediction for {missing_pred}, no ground truth for {missing_gt}")
    ids = sorted(ground_truth)
    per = [sample_scores(predictions[i], ground_truth[i], tol) for i in ids]
    return summarize(per)


def summarize(per: List[Dict[str, object]]) -> Dict[str, float]:
    if not per:
        raise DataError("no samples to evaluate")
    ious = [p["iou"] for p in per]
    j = float(np.mean(ious))
    f = float(np.mean([p["f"] for p in per]))
    inter = sum(p["intersection"] for p in per)
    union = sum(p["union"] for p in per)
    report = {"J": j, "F": f, "J&F": (j + f) / 2}
    for k in K_THRESHOLDS:
        report[f"P@{k}"] = precision_at_k(ious, k)
    report["overall_iou"] = inter / union if union else 1.0
    report["mean_iou"] = j
    report["mAP"] = map_5095(ious)
    return report


def report_csv(report: Mapping[str, float], columns: Sequence[str] = REPORT_COLUMNS) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerow([f"{report[c]:.6f}" for c in columns])
    return buf.getvalue()


def report_table(report: Mapping[str, float], columns: Optional[Sequence[str]] = None) -> str:
    columns = list(columns or report.keys())
    width = max(len(c) for c in columns)
    return "\n".join(f"{c:<{width}}  {report[c]:8.4f}" for c in columns) + "\n"
