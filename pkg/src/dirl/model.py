"""The full four-stage network: encode, fuse, refine, decode."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .attention import Refinement
from .decoder import Decoder
from .encoder import Encoder
from .fusion import build_fusion
from .types import AttentionVariant, ModelConfig, as_image, validate_pyramid


@dataclass
class Forward:
    mask: torch.Tensor
    logits: torch.Tensor
    attention: list[torch.Tensor] | None
    encoded: list[torch.Tensor]
    fused: list[torch.Tensor]
    refined: list[torch.Tensor]
    decoded: list[torch.Tensor]


class DIRLNet(nn.Module):
    """Inharmonious-region localisation network built from a ModelConfig.

    A ``NONE`` fusion or attention variant makes that stage the identity.
    ``DA`` and ``MDA`` build the same attention blocks; they differ only in
    whether the training loss supervises the spatial maps.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.fusion = build_fusion(cfg.fusion_variant, cfg.channels)
        self.refine = None
        if cfg.attention_variant is not AttentionVariant.NONE:
            self.refine = Refinement(cfg.channels, cfg.reduction)
        self.decoder = Decoder(cfg.channels, cfg.decoder_variant)

    def run(self, img: torch.Tensor, check: bool = False) -> Forward:
        """Full forward pass keeping every intermediate pyramid.

        With ``check=True`` each pyramid is validated against the config.
        """
        if check:
            as_image(img)
        size = tuple(img.shape[-2:])
        r = self.encoder(img)
        b = self.fusion(r) if self.fusion is not None else list(r)
        if self.refine is not None:
            a, attn = self.refine(b)
        else:
            a, attn = list(b), None
        mask, logits, d = self.decoder(a)
        if check:
            for pyr in (r, b, a):
                validate_pyramid(pyr, self.cfg, size)
        return Forward(mask, logits, attn, r, b, a, d)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        return self.run(img).mask


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
