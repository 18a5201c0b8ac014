"""Training, query-voting inference, evaluation and overlay rendering."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .config import RunConfig
from .criterion import make_target, total_loss
from .data import SHAPES, ObjectTrack, VideoSample, hflip_sample, write_pnm
from .errors import LoadError, NumericError
from .metrics import REPORT_COLUMNS, sample_scores, summarize
from .model import ReferringModel
from .tensor import AdamW, ParamGroup, Tensor, clip_grad_norm, load_tensors, no_grad, save_tensors
from .tensor import tensor as F

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("step", "total", "cls", "l1", "giou", "dice", "mask_focal")
CHECKPOINT = "checkpoint.qrv"
CONFIG_FILE = "config.txt"
PALETTE = np.array(
    [[1.0, 0.2, 0.2], [0.2, 1.0, 0.2], [0.2, 0.4, 1.0], [1.0, 1.0, 0.2], [1.0, 0.2, 1.0],
     [0.2, 1.0, 1.0], [1.0, 0.6, 0.1], [0.7, 0.7, 0.7]], dtype=np.float32)


class TrainingAborted(NumericError):
    def __init__(self, step: int, checkpoint: Optional[Path]):
        super().__init__(f"non-finite loss at step {step}; last good checkpoint: {checkpoint}")
        self.step = step
        self.checkpoint = checkpoint


# ------------------------------------------------------------- checkpoints
def save_checkpoint(model: ReferringModel, config: RunConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_tensors(out / CHECKPOINT, model.state_dict())
    config.save(out / CONFIG_FILE)
    return out / CHECKPOINT


def load_model(run_dir, config: Optional[RunConfig] = None) -> ReferringModel:
    """Rebuild a model from a run directory; ``config`` overrides the saved one."""
    run = Path(run_dir)
    ckpt = run / CHECKPOINT if run.is_dir() else run
    cfg_path = ckpt.parent / CONFIG_FILE
    if config is None:
        if not cfg_path.exists():
            raise LoadError(f"no {CONFIG_FILE} next to {ckpt}")
        config = RunConfig.load(cfg_path)
    model = ReferringModel(config.model_config(), seed=config.seed)
    state = load_tensors(ckpt)
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise LoadError(f"checkpoint {ckpt} does not fit the configured model: {exc}") from None
    return model


# ---------------------------------------------------------------- training
def subclip(sample: VideoSample, index) -> VideoSample:
    """The frames at ``index`` (in the given order) with their ground truth."""
    index = np.asarray(index)
    return replace(sample, frames=sample.frames[index], gt_visibility=sample.gt_visibility[index],
                   gt_box=sample.gt_box[index], gt_mask=sample.gt_mask[index],
                   distractors=[ObjectTrack(d.attributes, d.visibility[index], d.boxes[index], d.masks[index])
                                for d in sample.distractors])


def augment(sample: VideoSample, rng: np.random.Generator, config: RunConfig) -> VideoSample:
    if sample.T > config.frames:
        sample = subclip(sample, np.sort(rng.choice(sample.T, size=config.frames, replace=False)))
    if config.hflip and rng.random() < 0.5:
        sample = hflip_sample(sample)
    if config.jitter:
        gain = 1.0 + rng.uniform(-config.jitter, config.jitter)
        shift = rng.uniform(-config.jitter, config.jitter) * 0.5
        frames = np.clip(sample.frames * gain + shift, 0.0, 1.0).astype(np.float32)
        sample = replace(sample, frames=frames)
    return sample


def target_for(sample: VideoSample, config: RunConfig):
    label = 0 if config.class_agnostic else SHAPES.index(sample.referent["shape"])
    return make_target(sample.gt_visibility, sample.gt_box, sample.gt_mask, stride=4, label=label)


def build_optimizer(model: ReferringModel, config: RunConfig) -> AdamW:
    visual, rest = model.param_groups()
    return AdamW([ParamGroup(visual, config.lr_visual, config.weight_decay),
                  ParamGroup(rest, config.lr, config.weight_decay)])


def lr_scale(epoch: int, config: RunConfig) -> float:
    return config.lr_decay ** sum(epoch >= d for d in config.lr_drops)


def train_step(model: ReferringModel, optimizer: AdamW, sample: VideoSample, config: RunConfig,
               step: int) -> Dict[str, float]:
    try:
        out = model(sample.frames, sample.tokens)
        result = total_loss(out.logits, out.boxes, out.masks, target_for(sample, config), config.loss_weights())
    except NumericError:
        raise FloatingPointError(step) from None
    if not math.isfinite(result.breakdown["total"]):
        raise FloatingPointError(step)
    optimizer.zero_grad()
    result.total.backward()
    params = model.parameters()
    if config.grad_clip:
        clip_grad_norm(params, config.grad_clip)
    optimizer.step()
    return dict(step=step, **result.breakdown)


@dataclass
class TrainResult:
    model: ReferringModel
    history: List[Dict[str, float]]
    steps: int
    seconds: float
    checkpoint: Optional[Path]


def train(config: RunConfig, samples: Sequence[VideoSample], out_dir=None,
          model: Optional[ReferringModel] = None,
          on_epoch: Optional[Callable[[int, ReferringModel], Optional[bool]]] = None) -> TrainResult:
    """Single-clip batches, one checkpoint per epoch, loss rows appended to ``loss.csv``.

    Stops after ``epochs`` epochs, ``max_steps`` steps or ``max_minutes``,
    whichever comes first (zero disables a limit), or when ``on_epoch``
    returns True. A non-finite loss stops training; the parameters from
    before that step are saved and ``TrainingAborted`` is raised.
    """
    config.validate()
    if not samples:
        raise ValueError("no training samples")
    model = model or ReferringModel(config.model_config(), seed=config.seed)
    optimizer = build_optimizer(model, config)
    rng = np.random.default_rng(config.seed)
    out = Path(out_dir) if out_dir is not None else None
    writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        config.save(out / CONFIG_FILE)
        fh = open(out / "loss.csv", "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=LOSS_COLUMNS, lineterminator="\n")
        writer.writeheader()
    log.info("training %d parameters on %d clips; flags vl_fusion=%s rel_coords=%s",
             model.num_parameters(), len(samples), config.vl_fusion, config.rel_coords)
    history: List[Dict[str, float]] = []
    start = time.monotonic()
    step = 0
    checkpoint = None
    try:
        for epoch in range(config.epochs):
            optimizer.lr_scale = lr_scale(epoch, config)
            for idx in rng.permutation(len(samples)):
                sample = augment(samples[idx], rng, config)
                try:
                    row = train_step(model, optimizer, sample, config, step)
                except FloatingPointError:
                    if out is not None:
                        checkpoint = save_checkpoint(model, config, out)
                    raise TrainingAborted(step, checkpoint) from None
                history.append(row)
                if writer is not None:
                    writer.writerow({k: (row[k] if k == "step" else f"{row[k]:.6f}") for k in LOSS_COLUMNS})
                step += 1
                if _out_of_budget(config, step, start):
                    break
            if out is not None:
                checkpoint = save_checkpoint(model, config, out)
            stop = bool(on_epoch(epoch, model)) if on_epoch is not None else False
            log.info("epoch %d done, step %d, loss %.4f", epoch, step, history[-1]["total"])
            if stop or _out_of_budget(config, step, start):
                break
    finally:
        if writer is not None:
            fh.close()
    return TrainResult(model, history, step, time.monotonic() - start, checkpoint)


def _out_of_budget(config: RunConfig, step: int, start: float) -> bool:
    if config.max_steps and step >= config.max_steps:
        return True
    return bool(config.max_minutes) and time.monotonic() - start >= 60 * config.max_minutes


# --------------------------------------------------------------- inference
def select_query(probs: np.ndarray) -> int:
    """Query whose reference probability averaged over frames is highest (lowest index on ties)."""
    probs = np.asarray(probs)
    if probs.ndim != 2:
        raise ValueError(f"expected (T, N) probabilities, got {probs.shape}")
    return int(np.argmax(probs.mean(axis=0)))


@dataclass
class InferenceResult:
    selected: int
    masks: np.ndarray  # (T, H, W) bool
    boxes: np.ndarray  # (T, 4)
    probs: np.ndarray  # (T, N)


def infer(model: ReferringModel, frames: np.ndarray, tokens) -> InferenceResult:
    frames = np.asarray(frames)
    H, W = frames.shape[1:3]
    with no_grad():
        out = model(frames, tokens)
        probs = F.sigmoid(out.logits).data.max(axis=-1)
        sel = select_query(probs)
        # interpolate probabilities, not logits: saturated logits of unequal
        # magnitude would pull the 0.5 contour toward the weaker side
        full = F.bilinear_resize(F.sigmoid(out.masks[:, sel]), H, W).data
    return InferenceResult(sel, full > 0.5, out.boxes.data[:, sel].copy(), probs)


def selection_correct(pred_masks: np.ndarray, sample: VideoSample) -> bool:
    """The prediction overlaps the referent more than it overlaps any distractor."""
    pred = pred_masks.astype(bool)
    ref = int(np.logical_and(pred, sample.gt_mask.astype(bool)).sum())
    others = [int(np.logical_and(pred, d.masks.astype(bool)).sum()) for d in sample.distractors]
    return ref > 0 and all(ref > o for o in others)


def evaluate(model: ReferringModel, samples: Sequence[VideoSample]) -> Dict[str, object]:
    """Metric report plus referent-selection accuracy and per-sample rows."""
    per, rows = [], []
    for i, s in enumerate(samples):
        res = infer(model, s.frames, s.tokens)
        sc = sample_scores(res.masks, s.gt_mask)
        ok = selection_correct(res.masks, s)
        per.append(sc)
        rows.append({"sample": i, "expression": s.expression, "selected": res.selected, "iou": sc["iou"],
                     "f": sc["f"], "correct_referent": int(ok)})
    report = summarize(per)
    report["selection_acc"] = float(np.mean([r["correct_referent"] for r in rows]))
    return {"report": report, "samples": rows}


EVAL_COLUMNS = REPORT_COLUMNS + ("selection_acc",)


# ------------------------------------------------------------ visualization
def overlay(frame: np.ndarray, mask: np.ndarray, box: Optional[np.ndarray], color: np.ndarray) -> np.ndarray:
    """Blend ``color`` at half opacity over mask pixels and draw the box outline."""
    out = frame.astype(np.float32).copy()
    m = mask.astype(bool)
    out[m] = 0.5 * out[m] + 0.5 * color
    if box is not None and np.all(np.isfinite(box)):
        H, W = m.shape
        x0 = int(np.clip(round((box[0] - box[2] / 2) * W), 0, W - 1))
        x1 = int(np.clip(round((box[0] + box[2] / 2) * W) - 1, 0, W - 1))
        y0 = int(np.clip(round((box[1] - box[3] / 2) * H), 0, H - 1))
        y1 = int(np.clip(round((box[1] + box[3] / 2) * H) - 1, 0, H - 1))
        out[y0, x0:x1 + 1] = color
        out[y1, x0:x1 + 1] = color
        out[y0:y1 + 1, x0] = color
        out[y0:y1 + 1, x1] = color
    return out


def visualize(model: ReferringModel, sample: VideoSample, out_dir) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = infer(model, sample.frames, sample.tokens)
    color = PALETTE[res.selected % len(PALETTE)]
    paths = []
    for t in range(sample.T):
        img = overlay(sample.frames[t], res.masks[t], res.boxes[t], color)
        p = out / f"overlay_{t:02d}.ppm"
        write_pnm(p, np.round(np.clip(img, 0, 1) * 255).astype(np.uint8))
        paths.append(p)
    return paths
