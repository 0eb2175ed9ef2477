"""Transition-stage fusion of adjacent encoder levels: BFI, one-way BFI and AIM.

Levels are indexed from 0 (finest) in code. Every block emits the channel
count of its destination level, so all variants preserve pyramid shapes.
"""

from __future__ import annotations

from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .types import FusionVariant

TOP_DOWN = "down"
BOTTOM_UP = "up"


def upsample2x(x: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


class Up(nn.Module):
    """Bilinear 2x upsampling followed by a stride-1 3x3 conv."""

    def __init__(self, in_c: int, out_c: int, bias: bool = True):
        super().__init__()
        self.conv = nn.Conv2d(in_c, out_c, 3, stride=1, padding=1, bias=bias)

    def forward(self, x):
        return self.conv(upsample2x(x))


class Down(nn.Module):
    """Stride-2 3x3 conv."""

    def __init__(self, in_c: int, out_c: int, bias: bool = True):
        super().__init__()
        self.conv = nn.Conv2d(in_c, out_c, 3, stride=2, padding=1, bias=bias)

    def forward(self, x):
        return self.conv(x)


class BFIFusion(nn.Module):
    """Bi-directional feature integration over a whole pyramid.

    The top-down stream runs ``td[k] = r[k] + U(td[k+1])`` from the coarsest
    level and the bottom-up stream ``bu[k] = r[k] + D(bu[k-1])`` from the finest,
    so every output level sees every input level. The aggregation at level k
    sums ``D([td, bu] at k-1)``, ``td[k] + bu[k]`` and ``U([td, bu] at k+1)``;
    the boundary levels drop the missing neighbour term.

    ``streams`` selects the one-way variants: ``("down",)`` keeps only the
    top-down stream, ``("up",)`` only the bottom-up stream, and the
    concatenations become single-feature resamples.
    """

    def __init__(self, channels: Sequence[int], streams=(TOP_DOWN, BOTTOM_UP), bias: bool = True):
        super().__init__()
        streams = tuple(streams)
        if not streams or set(streams) - {TOP_DOWN, BOTTOM_UP} or len(set(streams)) != len(streams):
            raise ValueError(f"invalid streams {streams!r}")
        if len(channels) < 2:
            raise ValueError("fusion needs at least two levels")
        c = list(channels)
        n = len(c)
        self.streams = streams
        self.num_levels = n
        # td_up[k]: level k+1 -> k; bu_down[k]: level k -> k+1
        if TOP_DOWN in streams:
            self.td_up = nn.ModuleList(Up(c[k + 1], c[k], bias) for k in range(n - 1))
        if BOTTOM_UP in streams:
            self.bu_down = nn.ModuleList(Down(c[k], c[k + 1], bias) for k in range(n - 1))
        m = len(streams)
        # agg_down[k]: level k -> k+1; agg_up[k]: level k+1 -> k
        self.agg_down = nn.ModuleList(Down(m * c[k], c[k + 1], bias) for k in range(n - 1))
        self.agg_up = nn.ModuleList(Up(m * c[k + 1], c[k], bias) for k in range(n - 1))

    def top_down(self, r: Sequence[torch.Tensor]) -> list[torch.Tensor]:
        out = [None] * len(r)
        out[-1] = r[-1]
        for k in range(len(r) - 2, -1, -1):
            out[k] = r[k] + self.td_up[k](out[k + 1])
        return out

    def bottom_up(self, r: Sequence[torch.Tensor]) -> list[torch.Tensor]:
        out = [r[0]]
        for k in range(1, len(r)):
            out.append(r[k] + self.bu_down[k - 1](out[k - 1]))
        return out

    def forward(self, r: Sequence[torch.Tensor]) -> list[torch.Tensor]:
        if len(r) != self.num_levels:
            raise ValueError(f"expected {self.num_levels} levels, got {len(r)}")
        runs = [self.top_down(r) if s == TOP_DOWN else self.bottom_up(r) for s in self.streams]
        paired = [torch.cat([s[k] for s in runs], dim=1) if len(runs) > 1 else runs[0][k]
                  for k in range(self.num_levels)]
        out = []
        for k in range(self.num_levels):
            b = sum(s[k] for s in runs)
            if k > 0:
                b = b + self.agg_down[k - 1](paired[k - 1])
            if k < self.num_levels - 1:
                b = b + self.agg_up[k](paired[k + 1])
            out.append(b)
        return out


def _conv(in_c: int, out_c: int, bias: bool) -> nn.Conv2d:
    return nn.Conv2d(in_c, out_c, 3, padding=1, bias=bias)


class AIMBlock(nn.Module):
    """Aggregate interaction over (r_{k-1}, r_k, r_{k+1}); either neighbour may be absent.

    Branch outputs live at their own resolution and are brought to level k
    by parameter-free 2x2 average pooling or bilinear upsampling before the
    final conv and the residual ``+ r_k``.
    """

    def __init__(self, c_cur: int, c_prev: int | None = None, c_next: int | None = None, bias: bool = True):
        super().__init__()
        self.has_prev = c_prev is not None
        self.has_next = c_next is not None
        if not (self.has_prev or self.has_next):
            raise ValueError("AIM block needs at least one neighbour")
        c = c_cur
        if self.has_prev:
            # z_{k-1} = Conv(U(r_k) + Conv(r_{k-1}))
            self.prev_up = Up(c, c, bias)
            self.prev_conv = _conv(c_prev, c, bias)
            self.prev_out = _conv(c, c, bias)
            self.cur_down = Down(c_prev, c, bias)
        if self.has_next:
            # z_{k+1} = Conv(D(r_k) + Conv(r_{k+1}))
            self.next_down = Down(c, c, bias)
            self.next_conv = _conv(c_next, c, bias)
            self.next_out = _conv(c, c, bias)
            self.cur_up = Up(c_next, c, bias)
        self.cur_conv = _conv(c, c, bias)
        self.cur_out = _conv(c, c, bias)
        self.fuse = _conv(c, c, bias)

    def forward(self, r_prev, r_cur, r_next):
        z_cur = self.cur_conv(r_cur)
        total = 0
        if self.has_prev:
            z_prev = self.prev_out(self.prev_up(r_cur) + self.prev_conv(r_prev))
            total = total + F.avg_pool2d(z_prev, 2)
            z_cur = z_cur + self.cur_down(r_prev)
        if self.has_next:
            z_next = self.next_out(self.next_down(r_cur) + self.next_conv(r_next))
            total = total + upsample2x(z_next)
            z_cur = z_cur + self.cur_up(r_next)
        total = total + self.cur_out(z_cur)
        return self.fuse(total) + r_cur


class AIMFusion(nn.Module):
    def __init__(self, channels: Sequence[int], bias: bool = True):
        super().__init__()
        c = list(channels)
        n = len(c)
        if n < 2:
            raise ValueError("fusion needs at least two levels")
        self.blocks = nn.ModuleList(
            AIMBlock(c[k], c[k - 1] if k > 0 else None, c[k + 1] if k < n - 1 else None, bias)
            for k in range(n)
        )

    def forward(self, r: Sequence[torch.Tensor]) -> list[torch.Tensor]:
        if len(r) != len(self.blocks):
            raise ValueError(f"expected {len(self.blocks)} levels, got {len(r)}")
        n = len(r)
        return [
            blk(r[k - 1] if k > 0 else None, r[k], r[k + 1] if k < n - 1 else None)
            for k, blk in enumerate(self.blocks)
        ]


def build_fusion(variant, channels: Sequence[int], bias: bool = True) -> nn.Module | None:
    """Return the fusion module for ``variant``; None means b_k = r_k."""
    variant = FusionVariant(variant)
    if variant is FusionVariant.NONE:
        return None
    if variant is FusionVariant.AIM:
        return AIMFusion(channels, bias)
    streams = {
        FusionVariant.BFI: (TOP_DOWN, BOTTOM_UP),
        FusionVariant.BFI_DOWN: (TOP_DOWN,),
        FusionVariant.BFI_UP: (BOTTOM_UP,),
    }[variant]
    return BFIFusion(channels, streams, bias)
