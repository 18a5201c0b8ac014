"""Matplotlib figures written next to the CSV reports."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_loss_curves(rows: Sequence[Mapping[str, float]], path, columns=("total", "cls", "l1", "giou", "dice", "mask_focal")) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    steps = [r["step"] for r in rows]
    for c in columns:
        ax.plot(steps, [float(r[c]) for r in rows], label=c, linewidth=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("weighted loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def plot_report(report: Mapping[str, float], path, title: str = "") -> Path:
    names = list(report)
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.bar(range(len(names)), [report[n] for n in names], color="#4a7ab5")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax.set_ylim(0, 1)
    if title:
        ax.set_title(title)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)
