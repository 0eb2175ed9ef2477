"""Dual (channel then spatial) attention per pyramid level, exposing the spatial maps."""

from __future__ import annotations

from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .types import as_mask


class ChannelAttention(nn.Module):
    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.mlp = nn.Sequential(
            nn.Conv2d(channels, hidden, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, channels, 1),
        )

    def forward(self, x):
        avg = self.mlp(F.adaptive_avg_pool2d(x, 1))
        mx = self.mlp(F.adaptive_max_pool2d(x, 1))
        return x * torch.sigmoid(avg + mx)


class SpatialAttention(nn.Module):
    def __init__(self, kernel_size: int = 7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2, bias=True)

    def attention_map(self, x):
        pooled = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(pooled))

    def forward(self, x):
        a = self.attention_map(x)
        return x * a, a


class DualAttention(nn.Module):
    """CBAM block returning ``(refined, spatial_map)``."""

    def __init__(self, channels: int, reduction: int = 16, kernel_size: int = 7):
        super().__init__()
        self.channel = ChannelAttention(channels, reduction)
        self.spatial = SpatialAttention(kernel_size)

    def forward(self, x):
        return self.spatial(self.channel(x))


class Refinement(nn.Module):
    """One dual-attention block per level; maps {b_k} to ({a_k}, {A_k})."""

    def __init__(self, channels: Sequence[int], reduction: int = 16):
        super().__init__()
        self.blocks = nn.ModuleList(DualAttention(c, reduction) for c in channels)

    def forward(self, feats: Sequence[torch.Tensor]):
        if len(feats) != len(self.blocks):
            raise ValueError(f"expected {len(self.blocks)} levels, got {len(feats)}")
        refined, maps = zip(*(blk(f) for blk, f in zip(self.blocks, feats)))
        return list(refined), list(maps)


def resize_mask(mask: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Area-average resize; exact box averaging for integer downscale factors."""
    if tuple(mask.shape[-2:]) == tuple(size):
        return mask
    return F.interpolate(mask, size=size, mode="area")


def attention_supervision_targets(gt: torch.Tensor, shapes: Sequence[Sequence[int]]) -> list[torch.Tensor]:
    """Resize a full-resolution ground-truth mask to each level's (h, w).

    ``shapes`` entries may be (h, w) or any shape tuple ending in (h, w).
    """
    as_mask(gt)
    return [resize_mask(gt, tuple(s[-2:])) for s in shapes]
