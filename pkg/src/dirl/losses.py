"""Mask BCE, SSIM and attention-supervision losses."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import torch
import torch.nn.functional as F

from .attention import resize_mask

EPS = 1e-7
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
LAMBDA_AUX = 0.1


def _check_pair(pred: torch.Tensor, gt: torch.Tensor) -> None:
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {tuple(pred.shape)} vs gt {tuple(gt.shape)}")
    if pred.dim() != 4:
        raise ValueError(f"expected (B, C, H, W) masks, got {tuple(pred.shape)}")


def bce_loss(pred: torch.Tensor, gt: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Per-pixel BCE summed over each image, averaged over the batch."""
    _check_pair(pred, gt)
    p = pred.clamp(eps, 1 - eps)
    per_pixel = -(gt * torch.log(p) + (1 - gt) * torch.log(1 - p))
    return per_pixel.flatten(1).sum(1).mean()


@lru_cache(maxsize=16)
def _window_cached(size: int, sigma: float | None, dtype: torch.dtype) -> torch.Tensor:
    if sigma is None:
        w = torch.ones(size, size, dtype=torch.float64)
    else:
        x = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
        g = torch.exp(-(x ** 2) / (2 * sigma ** 2))
        w = torch.outer(g, g)
    return (w / w.sum()).to(dtype)


def ssim_window(size: int, sigma: float | None = 1.5, dtype=torch.float32) -> torch.Tensor:
    """Normalised 2-D window; ``sigma=None`` gives a uniform box."""
    return _window_cached(size, sigma, dtype).clone()


def ssim_map(x: torch.Tensor, y: torch.Tensor, window_size: int = 11, sigma: float | None = 1.5) -> torch.Tensor:
    """SSIM at every valid (unpadded) window position, shape (B, C, H-w+1, W-w+1)."""
    _check_pair(x, y)
    h, w = x.shape[-2:]
    if window_size > h or window_size > w:
        raise ValueError(f"SSIM window {window_size} exceeds image size {h}x{w}")
    c = x.shape[1]
    win = _window_cached(window_size, sigma, x.dtype).to(x.device).expand(c, 1, window_size, window_size)

    def filt(t):
        return F.conv2d(t, win, groups=c)

    mu_x, mu_y = filt(x), filt(y)
    var_x = filt(x * x) - mu_x ** 2
    var_y = filt(y * y) - mu_y ** 2
    cov = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return num / den


def ssim_loss(pred: torch.Tensor, gt: torch.Tensor, window_size: int = 11, sigma: float | None = 1.5) -> torch.Tensor:
    return 1 - ssim_map(pred, gt, window_size, sigma).mean()


def aux_attention_loss(attn: Sequence[torch.Tensor], gt: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Sum over levels of BCE between each spatial map and the area-resized mask."""
    if not attn:
        raise ValueError("no attention maps given")
    return sum(bce_loss(a, resize_mask(gt, tuple(a.shape[-2:])), eps) for a in attn)


@dataclass
class LossBreakdown:
    bce: torch.Tensor
    ssim: torch.Tensor
    aux: torch.Tensor
    total: torch.Tensor
    lambda_aux: float

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("bce", "ssim", "aux", "total")}


def total_loss(
    pred: torch.Tensor,
    attn: Sequence[torch.Tensor] | None,
    gt: torch.Tensor,
    lambda_aux: float = LAMBDA_AUX,
    window_size: int = 11,
) -> LossBreakdown:
    """``bce + ssim + lambda_aux * aux``; aux is zero when there are no maps."""
    bce = bce_loss(pred, gt)
    ssim = ssim_loss(pred, gt, window_size)
    aux = aux_attention_loss(attn, gt) if attn else torch.zeros((), dtype=pred.dtype)
    return LossBreakdown(bce, ssim, aux, bce + ssim + lambda_aux * aux, lambda_aux)
