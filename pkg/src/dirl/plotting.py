"""Figures and raster exports for training runs, ablations and attention maps."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402
from PIL import Image  # noqa: E402


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_training_log(rows: Sequence[dict], path: str | Path) -> Path:
    """Per-epoch mean of each loss term on a log scale."""
    epochs = sorted({r["epoch"] for r in rows})
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in ("total", "bce", "ssim", "aux"):
        means = [np.mean([r[key] for r in rows if r["epoch"] == e]) for e in epochs]
        if any(m > 0 for m in means):
            ax.plot(epochs, means, label=key)
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss (epoch mean)")
    ax.legend()
    return _save(fig, path)


def plot_ablation(results, path: str | Path) -> Path:
    """Grouped bars of AP, F1 and IoU per ablation row."""
    labels = [str(r.row.id) for r in results]
    x = np.arange(len(results))
    fig, ax = plt.subplots(figsize=(max(4, 0.8 * len(results) + 2), 4))
    for i, key in enumerate(("ap", "f1", "iou")):
        ax.bar(x + (i - 1) * 0.27, [getattr(r.report, key) for r in results], 0.27, label=key.upper())
    ax.set_xticks(x, labels)
    ax.set_xlabel("ablation row")
    ax.set_ylim(0, 1)
    ax.legend()
    return _save(fig, path)


def plot_attention_grid(image: torch.Tensor, maps: Sequence[torch.Tensor], path: str | Path,
                        mask: torch.Tensor | None = None) -> Path:
    """One row: the input, optionally its mask, then each attention map."""
    panels = [("input", image.permute(1, 2, 0).numpy())]
    if mask is not None:
        panels.append(("mask", mask[0].numpy()))
    panels += [(f"A{k + 1}", m[0].numpy()) for k, m in enumerate(maps)]
    fig, axes = plt.subplots(1, len(panels), figsize=(2 * len(panels), 2.2))
    for ax, (title, arr) in zip(np.atleast_1d(axes), panels):
        ax.imshow(arr, cmap=None if arr.ndim == 3 else "gray", vmin=0, vmax=1, interpolation="nearest")
        ax.set_title(title)
        ax.axis("off")
    return _save(fig, path)


def save_gray_png(x: torch.Tensor, path: str | Path) -> Path:
    """Write a (1, H, W) or (H, W) map in [0, 1] as an 8-bit grayscale PNG."""
    arr = x.detach().cpu().reshape(x.shape[-2:]).clamp(0, 1).numpy()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.round(arr * 255).astype(np.uint8), mode="L").save(path)
    return path
