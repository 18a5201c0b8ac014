"""Run configuration: a flat key=value file that command-line flags can override."""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple

from .criterion import LossWeights
from .errors import ConfigError
from .model import ModelConfig


@dataclass
class RunConfig:
    data_dir: str = "data/train"
    out_dir: str = "runs/default"
    seed: int = 0
    # optimisation
    epochs: int = 30
    lr: float = 1e-4
    lr_visual: float = 5e-5
    weight_decay: float = 5e-4
    lr_drops: Tuple[int, ...] = (20, 26)
    lr_decay: float = 0.1
    grad_clip: float = 0.1
    max_steps: int = 0
    max_minutes: float = 0.0
    # augmentation
    hflip: bool = True
    jitter: float = 0.1
    # model
    frames: int = 5
    dim: int = 256
    num_queries: int = 5
    enc_layers: int = 4
    dec_layers: int = 4
    heads: int = 8
    mask_channels: int = 8
    class_agnostic: bool = True
    vl_fusion: bool = True
    rel_coords: bool = True
    temporal_attention: bool = True
    text_pool: str = "mean"
    dtype: str = "float32"
    # loss weights
    w_cls: float = 2.0
    w_l1: float = 5.0
    w_giou: float = 2.0
    w_dice: float = 5.0
    w_mask_focal: float = 2.0

    def validate(self) -> "RunConfig":
        if self.epochs < 0 or self.max_steps < 0 or self.max_minutes < 0:
            raise ConfigError("epochs, max_steps and max_minutes must be nonnegative")
        if self.lr <= 0 or self.lr_visual <= 0:
            raise ConfigError("learning rates must be positive")
        if self.weight_decay < 0 or self.grad_clip < 0:
            raise ConfigError("weight_decay and grad_clip must be nonnegative")
        if not 0 <= self.jitter < 1:
            raise ConfigError("jitter must lie in [0, 1)")
        if min(self.w_cls, self.w_l1, self.w_giou, self.w_dice, self.w_mask_focal) < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.frames < 1:
            raise ConfigError("frames must be >= 1")
        self.model_config()
        return self

    def model_config(self, num_categories: int = 3) -> ModelConfig:
        return ModelConfig(
            dim=self.dim, num_queries=self.num_queries, heads=self.heads, enc_layers=self.enc_layers,
            dec_layers=self.dec_layers, mask_channels=self.mask_channels,
            num_classes=1 if self.class_agnostic else num_categories, text_pool=self.text_pool,
            vl_fusion=self.vl_fusion, rel_coords=self.rel_coords,
            temporal_attention=self.temporal_attention, dtype=self.dtype,
        ).validate()

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.w_cls, self.w_l1, self.w_giou, self.w_dice, self.w_mask_focal)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    # ------------------------------------------------------------ text io
    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str, base: "RunConfig" = None) -> "RunConfig":
        values = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected key = value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = value
        return (base or cls()).with_strings(values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        return cls.from_text(p.read_text())

    def with_strings(self, values: Mapping[str, str]) -> "RunConfig":
        hints = typing.get_type_hints(type(self))
        known = {f.name for f in fields(self)}
        changes: Dict[str, Any] = {}
        for key, value in values.items():
            key = key.replace("-", "_")
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            changes[key] = parse_value(value, hints[key], key)
        return self.replace(**changes).validate()


def parse_value(value: str, kind, key: str = "?"):
    try:
        if kind is bool:
            v = value.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        if typing.get_origin(kind) is tuple:
            return tuple(int(x) for x in value.split(",") if x.strip())
        return str(value)
    except ValueError:
        raise ConfigError(f"bad value {value!r} for {key}") from None
