"""Cascaded decoders: GGD, GGD without the global shortcut, and the plain UNet decoder."""

from __future__ import annotations

from typing import Sequence

import torch
import torch.nn as nn

from .fusion import Up
from .types import DecoderVariant


class Decoder(nn.Module):
    """Decode refined features {a_k} (finest first) into a mask.

    The cascade starts from ``d_5 = a_5``. For k = 4..1 the previous output is
    projected to c_k by an ``Up`` layer, then

    * ``REG``:     d_k = conv([U(d_{k+1}); a_k])
    * ``GGD_SIM``: d_k = conv(U(d_{k+1}) * a_k)
    * ``GGD``:     d_k = conv([U(d_{k+1}) * a_k; g_k])

    where g_k is a_5 carried to level k by a chain of ``Up`` layers shared
    across blocks. Every conv except the 1x1 head is followed by ReLU.
    """

    def __init__(self, channels: Sequence[int], variant=DecoderVariant.GGD, bias: bool = True):
        super().__init__()
        c = list(channels)
        n = len(c)
        self.variant = DecoderVariant(variant)
        self.up = nn.ModuleList(Up(c[k + 1], c[k], bias) for k in range(n - 1))
        if self.variant is DecoderVariant.GGD:
            self.context = nn.ModuleList(Up(c[k + 1], c[k], bias) for k in range(n - 1))
        widen = 1 if self.variant is DecoderVariant.GGD_SIM else 2
        self.fuse = nn.ModuleList(
            nn.Conv2d(widen * c[k], c[k], 3, padding=1, bias=bias) for k in range(n - 1)
        )
        self.head = nn.Conv2d(c[0], 1, 1, bias=bias)
        self.relu = nn.ReLU()

    def global_context(self, a_top: torch.Tensor) -> list[torch.Tensor]:
        g = [a_top]
        for k in range(len(self.context) - 1, -1, -1):
            g.insert(0, self.relu(self.context[k](g[0])))
        return g

    def forward(self, a: Sequence[torch.Tensor]):
        """Return ``(mask, logits, [d_1..d_5])``."""
        n = len(a)
        if n != len(self.up) + 1:
            raise ValueError(f"expected {len(self.up) + 1} levels, got {n}")
        g = self.global_context(a[-1]) if self.variant is DecoderVariant.GGD else None
        d = [None] * n
        d[-1] = a[-1]
        for k in range(n - 2, -1, -1):
            top = self.relu(self.up[k](d[k + 1]))
            if self.variant is DecoderVariant.REG:
                x = torch.cat([top, a[k]], dim=1)
            elif self.variant is DecoderVariant.GGD_SIM:
                x = top * a[k]
            else:
                x = torch.cat([top * a[k], g[k]], dim=1)
            d[k] = self.relu(self.fuse[k](x))
        logits = self.head(d[0])
        return torch.sigmoid(logits), logits, d
