"""Synthetic referring-video clips: moving shapes plus templated expressions.

Each clip shows ``n_objects`` shapes; exactly one is the referent and the
expression ``"the <size> <color> <shape> <motion>"`` singles it out. Masks are
hard inside-tests at pixel centres, so they can be re-derived analytically.
"""
from __future__ import annotations

import json
import math
from itertools import combinations
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DataError

MANIFEST_VERSION = 1
MAX_TOKENS = 16

SIZES = {"small": 0.07, "medium": 0.11, "large": 0.16}
COLORS = {
    "red": (0.90, 0.15, 0.15),
    "green": (0.15, 0.80, 0.20),
    "blue": (0.20, 0.30, 0.95),
    "yellow": (0.95, 0.90, 0.15),
    "purple": (0.60, 0.20, 0.80),
    "orange": (1.00, 0.55, 0.10),
    "cyan": (0.10, 0.85, 0.90),
    "white": (0.95, 0.95, 0.95),
}
SHAPES = ("circle", "square", "triangle")
MOTIONS = {
    "static": (0.0, 0.0),
    "left": (-1.0, 0.0),
    "right": (1.0, 0.0),
    "up": (0.0, -1.0),
    "down": (0.0, 1.0),
}
MOTION_WORDS = {
    "static": ("standing", "still"),
    "left": ("moving", "left"),
    "right": ("moving", "right"),
    "up": ("moving", "up"),
    "down": ("moving", "down"),
}
SLOTS = ("size", "color", "shape", "motion")


class Vocabulary:
    """Closed word list of the expression grammar; index 0 is padding."""

    PAD = "<pad>"

    def __init__(self, words: Optional[Sequence[str]] = None):
        if words is None:
            words = ["the", *SIZES, *COLORS, *SHAPES]
            for pair in MOTION_WORDS.values():
                words.extend(w for w in pair if w not in words)
        self.words: List[str] = [self.PAD] + [w for w in words if w != self.PAD]
        self.index: Dict[str, int] = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ConfigError("vocabulary contains duplicate words")

    def __len__(self) -> int:
        return len(self.words)

    def encode(self, expression: str) -> np.ndarray:
        try:
            ids = [self.index[w] for w in expression.split()]
        except KeyError as e:
            raise DataError(f"word {e.args[0]!r} is not in the vocabulary") from None
        if len(ids) > MAX_TOKENS:
            raise DataError(f"expression has {len(ids)} tokens; limit is {MAX_TOKENS}")
        return np.asarray(ids, dtype=np.int64)

    def decode(self, tokens) -> str:
        return " ".join(self.words[int(t)] for t in tokens if int(t) != 0)


VOCAB = Vocabulary()


@dataclass
class SynthConfig:
    T: int = 5
    H: int = 96
    W: int = 96
    n_objects: int = 2
    motion_kinds: Tuple[str, ...] = tuple(MOTIONS)
    speed: Tuple[float, float] = (0.04, 0.08)  # fraction of width per frame
    noise: float = 0.02
    minimal_expression: bool = False

    def validate(self) -> "SynthConfig":
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if not 1 <= self.n_objects <= 4:
            raise ConfigError(f"n_objects must be in [1, 4], got {self.n_objects}")
        if self.H % 32 or self.W % 32 or self.H <= 0 or self.W <= 0:
            raise ConfigError(f"H and W must be positive multiples of 32, got {self.H}x{self.W}")
        bad = [m for m in self.motion_kinds if m not in MOTIONS]
        if bad or not self.motion_kinds:
            raise ConfigError(f"unknown motion kinds {bad}")
        return self


@dataclass(frozen=True)
class ObjectSpec:
    """One shape's attributes and trajectory (pixel units, frame-0 centre)."""

    shape: str
    color: str
    size: str
    motion: str
    x0: float
    y0: float
    speed: float = 0.0

    def attributes(self) -> Dict[str, str]:
        return {"size": self.size, "color": self.color, "shape": self.shape, "motion": self.motion}

    def radius(self, H: int, W: int) -> float:
        return SIZES[self.size] * min(H, W)

    def center(self, t: int) -> Tuple[float, float]:
        dx, dy = MOTIONS[self.motion]
        return self.x0 + dx * self.speed * t, self.y0 + dy * self.speed * t


@dataclass
class ObjectTrack:
    """Per-frame ground truth of one object."""

    attributes: Dict[str, str]
    visibility: np.ndarray  # (T,) uint8
    boxes: np.ndarray  # (T, 4) normalized cx, cy, w, h; NaN where invisible
    masks: np.ndarray  # (T, H, W) uint8 in {0, 1}


@dataclass
class VideoSample:
    frames: np.ndarray  # (T, H, W, 3) float32 in [0, 1]
    expression: str
    tokens: np.ndarray  # (L,) int64, no padding
    gt_visibility: np.ndarray
    gt_box: np.ndarray
    gt_mask: np.ndarray
    referent: Dict[str, str]
    distractors: List[ObjectTrack] = field(default_factory=list)
    seed: Optional[int] = None
    specs: List[ObjectSpec] = field(default_factory=list)

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    def track(self) -> ObjectTrack:
        return ObjectTrack(self.referent, self.gt_visibility, self.gt_box, self.gt_mask)


# ------------------------------------------------------------------ geometry
def inside(spec: ObjectSpec, t: int, H: int, W: int) -> np.ndarray:
    """Boolean (H, W) mask of pixel centres inside the shape at frame ``t``."""
    cx, cy = spec.center(t)
    r = spec.radius(H, W)
    ys, xs = np.mgrid[0:H, 0:W]
    px, py = xs + 0.5 - cx, ys + 0.5 - cy
    if spec.shape == "circle":
        return px * px + py * py <= r * r
    if spec.shape == "square":
        half = 0.8 * r
        return (np.abs(px) <= half) & (np.abs(py) <= half)
    if spec.shape == "triangle":
        # upward equilateral triangle inscribed in the circle of radius r
        v = [(0.0, -r), (-r * math.sqrt(3) / 2, r / 2), (r * math.sqrt(3) / 2, r / 2)]
        ok = np.ones((H, W), dtype=bool)
        for (ax, ay), (bx, by) in zip(v, v[1:] + v[:1]):
            ok &= (bx - ax) * (py - ay) - (by - ay) * (px - ax) <= 0
        return ok
    raise ConfigError(f"unknown shape {spec.shape!r}")


def mask_to_box(mask: np.ndarray) -> np.ndarray:
    """Tight normalized (cx, cy, w, h) of a non-empty binary mask."""
    H, W = mask.shape
    ys, xs = np.nonzero(mask)
    x0, x1 = xs.min(), xs.max() + 1
    y0, y1 = ys.min(), ys.max() + 1
    return np.array([(x0 + x1) / 2 / W, (y0 + y1) / 2 / H, (x1 - x0) / W, (y1 - y0) / H])


def _track(spec: ObjectSpec, masks: np.ndarray) -> ObjectTrack:
    T = masks.shape[0]
    vis = masks.reshape(T, -1).any(axis=1).astype(np.uint8)
    boxes = np.full((T, 4), np.nan)
    for t in range(T):
        if vis[t]:
            boxes[t] = mask_to_box(masks[t])
    return ObjectTrack(spec.attributes(), vis, boxes, masks.astype(np.uint8))


def expression_for(referent: ObjectSpec, others: Sequence[ObjectSpec], minimal: bool = False) -> str:
    """Template expression; with ``minimal`` only slots needed for uniqueness are kept."""
    slots = list(SLOTS)
    if minimal:
        ref = referent.attributes()
        for k in range(0, 4):
            found = None
            for combo in combinations(["size", "color", "motion"], k):
                used = set(combo) | {"shape"}
                if all(any(o.attributes()[s] != ref[s] for s in used) for o in others):
                    found = used
                    break
            if found:
                slots = [s for s in SLOTS if s in found]
                break
    words = ["the"]
    for s in slots:
        if s == "motion":
            words.extend(MOTION_WORDS[referent.motion])
        else:
            words.append(getattr(referent, s))
    return " ".join(words)


def parse_expression(expression: str) -> Dict[str, str]:
    """Attribute slots present in a template expression."""
    words = expression.split()
    out: Dict[str, str] = {}
    for w in words:
        if w in SIZES:
            out["size"] = w
        elif w in COLORS:
            out["color"] = w
        elif w in SHAPES:
            out["shape"] = w
    for motion, pair in MOTION_WORDS.items():
        if " ".join(pair) in expression:
            out["motion"] = motion
    return out


def is_unique(referent: Dict[str, str], others: Sequence[Dict[str, str]], expression: str) -> bool:
    """True when no distractor matches every attribute the expression mentions."""
    mentioned = parse_expression(expression)
    if any(referent[k] != v for k, v in mentioned.items()):
        return False
    return all(any(o[k] != v for k, v in mentioned.items()) for o in others)


# ---------------------------------------------------------------- rendering
def render_sample(specs: Sequence[ObjectSpec], referent_index: int, config: SynthConfig,
                  expression: Optional[str] = None, seed: Optional[int] = None,
                  rng: Optional[np.random.Generator] = None) -> VideoSample:
    """Render explicit object specs. The referent is drawn last (never occluded)."""
    config.validate()
    T, H, W = config.T, config.H, config.W
    rng = rng if rng is not None else np.random.default_rng(seed)
    frames = np.empty((T, H, W, 3), dtype=np.float32)
    bg = np.float32(0.08)
    order = [i for i in range(len(specs)) if i != referent_index] + [referent_index]
    raw = np.zeros((len(specs), T, H, W), dtype=bool)
    for t in range(T):
        img = np.full((H, W, 3), bg, dtype=np.float32)
        if config.noise:
            img += rng.normal(0.0, config.noise, size=(H, W, 3)).astype(np.float32)
        for i in order:
            m = inside(specs[i], t, H, W)
            raw[i, t] = m
            img[m] = COLORS[specs[i].color]
        frames[t] = np.clip(img, 0.0, 1.0)
    # visible part: pixels not painted over by a later-drawn object
    visible = raw.copy()
    for pos, i in enumerate(order):
        for j in order[pos + 1:]:
            visible[i] &= ~raw[j]
    ref = specs[referent_index]
    others = [s for k, s in enumerate(specs) if k != referent_index]
    if expression is None:
        expression = expression_for(ref, others, config.minimal_expression)
    track = _track(ref, visible[referent_index])
    distractors = [_track(specs[k], visible[k]) for k in range(len(specs)) if k != referent_index]
    return VideoSample(
        frames=frames,
        expression=expression,
        tokens=VOCAB.encode(expression),
        gt_visibility=track.visibility,
        gt_box=track.boxes,
        gt_mask=track.masks,
        referent=ref.attributes(),
        distractors=distractors,
        seed=seed,
        specs=list(specs),
    )


def _random_spec(rng: np.random.Generator, config: SynthConfig) -> ObjectSpec:
    H, W = config.H, config.W
    size = str(rng.choice(list(SIZES)))
    r = SIZES[size] * min(H, W)
    motion = str(rng.choice(list(config.motion_kinds)))
    speed = 0.0 if motion == "static" else float(rng.uniform(*config.speed) * W)
    return ObjectSpec(
        shape=str(rng.choice(SHAPES)),
        color=str(rng.choice(list(COLORS))),
        size=size,
        motion=motion,
        x0=float(rng.uniform(r, W - r)),
        y0=float(rng.uniform(r, H - r)),
        speed=speed,
    )


def generate_sample(seed: int, config: Optional[SynthConfig] = None) -> VideoSample:
    """Deterministic clip for ``seed``: same seed and config give identical samples."""
    config = config or SynthConfig()
    config.validate()
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        specs = [_random_spec(rng, config) for _ in range(config.n_objects)]
        ref = int(rng.integers(config.n_objects))
        others = [s.attributes() for k, s in enumerate(specs) if k != ref]
        expr = expression_for(specs[ref], [s for k, s in enumerate(specs) if k != ref],
                              config.minimal_expression)
        if not is_unique(specs[ref].attributes(), others, expr):
            continue  # ambiguous draw; resample
        sample = render_sample(specs, ref, config, expression=expr, seed=seed, rng=rng)
        if sample.gt_visibility.any():
            return sample
    raise DataError(f"seed {seed}: could not draw an unambiguous clip")


def generate_dataset(n: int, base_seed: int = 0, config: Optional[SynthConfig] = None,
                     workers: int = 1) -> List[VideoSample]:
    seeds = [base_seed + i for i in range(n)]
    if workers <= 1:
        return [generate_sample(s, config) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: generate_sample(s, config), seeds))


# ----------------------------------------------------------- augmentation
_FLIP_WORDS = {"left": "right", "right": "left"}


def hflip_sample(sample: VideoSample) -> VideoSample:
    """Mirror left-right, swapping the words 'left' and 'right' in the expression."""
    expr = " ".join(_FLIP_WORDS.get(w, w) for w in sample.expression.split())

    def flip_boxes(b):
        b = b.copy()
        b[:, 0] = 1.0 - b[:, 0]
        return b

    def flip_attr(a):
        a = dict(a)
        if a.get("motion") in _FLIP_WORDS:
            a["motion"] = _FLIP_WORDS[a["motion"]]
        return a

    return replace(
        sample,
        frames=sample.frames[:, :, ::-1].copy(),
        expression=expr,
        tokens=VOCAB.encode(expr),
        gt_box=flip_boxes(sample.gt_box),
        gt_mask=sample.gt_mask[:, :, ::-1].copy(),
        referent=flip_attr(sample.referent),
        distractors=[ObjectTrack(flip_attr(d.attributes), d.visibility, flip_boxes(d.boxes),
                                 d.masks[:, :, ::-1].copy()) for d in sample.distractors],
        specs=[],
    )


# ------------------------------------------------------------------ PNM io
def write_pnm(path: Path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim == 3:
        header = f"P6\n{img.shape[1]} {img.shape[0]}\n255\n"
    else:
        header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n"
    Path(path).write_bytes(header.encode("ascii") + np.ascontiguousarray(img).tobytes())


def read_pnm(path: Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    tokens: List[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    pos += 1  # single whitespace byte before the raster
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255 or magic not in (b"P5", b"P6"):
        raise DataError(f"{path}: unsupported PNM header {magic!r} maxval={maxval}")
    ch = 3 if magic == b"P6" else 1
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h * ch, offset=pos)
    return data.reshape((h, w, 3) if ch == 3 else (h, w)).copy()


# ---------------------------------------------------------- dataset on disk
def _box_list(boxes: np.ndarray, vis: np.ndarray):
    return [[float(v) for v in b] if vis[t] else None for t, b in enumerate(boxes)]


def _box_array(items, T: int) -> np.ndarray:
    out = np.full((T, 4), np.nan)
    for t, b in enumerate(items):
        if b is not None:
            out[t] = b
    return out


def write_dataset(samples: Sequence[VideoSample], directory, config: Optional[SynthConfig] = None) -> dict:
    """Persist samples as PPM/PGM files plus ``manifest.json``; returns the manifest."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(samples):
        sdir = root / f"sample_{i:05d}"
        sdir.mkdir(exist_ok=True)
        for t in range(s.T):
            write_pnm(sdir / f"frame_{t:02d}.ppm", np.round(s.frames[t] * 255.0).astype(np.uint8))
            write_pnm(sdir / f"mask_{t:02d}.pgm", s.gt_mask[t].astype(np.uint8) * 255)
            for d, track in enumerate(s.distractors):
                write_pnm(sdir / f"distractor_{d}_mask_{t:02d}.pgm", track.masks[t].astype(np.uint8) * 255)
        entries.append({
            "id": i,
            "dir": sdir.name,
            "seed": s.seed,
            "num_frames": s.T,
            "height": int(s.frames.shape[1]),
            "width": int(s.frames.shape[2]),
            "expression": s.expression,
            "referent": s.referent,
            "visibility": [int(v) for v in s.gt_visibility],
            "boxes": _box_list(s.gt_box, s.gt_visibility),
            "distractors": [
                {"attributes": d.attributes, "visibility": [int(v) for v in d.visibility],
                 "boxes": _box_list(d.boxes, d.visibility)}
                for d in s.distractors
            ],
        })
    manifest = {
        "version": MANIFEST_VERSION,
        "vocabulary": VOCAB.words,
        "config": _config_dict(config) if config else None,
        "samples": entries,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return manifest


def _config_dict(config: SynthConfig) -> dict:
    return {"T": config.T, "H": config.H, "W": config.W, "n_objects": config.n_objects,
            "motion_kinds": list(config.motion_kinds), "speed": list(config.speed),
            "noise": config.noise, "minimal_expression": config.minimal_expression}


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except FileNotFoundError:
        raise DataError(f"{path}: manifest not found") from None
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(manifest, dict) or "version" not in manifest:
        raise DataError(f"{path}: manifest lacks a version field")
    if manifest["version"] != MANIFEST_VERSION:
        raise DataError(f"{path}: unsupported manifest version {manifest['version']}")
    if not isinstance(manifest.get("samples"), list):
        raise DataError(f"{path}: manifest lacks a samples list")
    return manifest


def read_sample(directory, entry: dict, index: int) -> VideoSample:
    root = Path(directory)
    try:
        sdir = root / entry["dir"]
        T = int(entry["num_frames"])
        frames = np.stack([read_pnm(sdir / f"frame_{t:02d}.ppm") for t in range(T)]).astype(np.float32) / 255.0
        masks = np.stack([read_pnm(sdir / f"mask_{t:02d}.pgm") for t in range(T)]) > 127
        vis = np.asarray(entry["visibility"], dtype=np.uint8)
        boxes = _box_array(entry["boxes"], T)
        distractors = []
        for d, info in enumerate(entry["distractors"]):
            dm = np.stack([read_pnm(sdir / f"distractor_{d}_mask_{t:02d}.pgm") for t in range(T)]) > 127
            distractors.append(ObjectTrack(dict(info["attributes"]),
                                           np.asarray(info["visibility"], dtype=np.uint8),
                                           _box_array(info["boxes"], T), dm.astype(np.uint8)))
        expression = str(entry["expression"])
        if len(vis) != T or len(entry["boxes"]) != T:
            raise ValueError("visibility/boxes length differs from num_frames")
        return VideoSample(
            frames=frames,
            expression=expression,
            tokens=VOCAB.encode(expression),
            gt_visibility=vis,
            gt_box=boxes,
            gt_mask=masks.astype(np.uint8),
            referent=dict(entry["referent"]),
            distractors=distractors,
            seed=entry.get("seed"),
        )
    except DataError as e:
        raise DataError(f"sample {index}: {e}") from None
    except (KeyError, TypeError, ValueError, OSError) as e:
        raise DataError(f"sample {index}: malformed entry ({type(e).__name__}: {e})") from None


def read_dataset(directory) -> List[VideoSample]:
    manifest = read_manifest(directory)
    return [read_sample(directory, entry, i) for i, entry in enumerate(manifest["samples"])]
