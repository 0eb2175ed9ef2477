"""Five-stage residual encoder with a 3x3, stride-1 stem and no stem pooling."""

from __future__ import annotations

import torch
import torch.nn as nn

from .types import ModelConfig, check_spatial_size


def conv3x3(in_c: int, out_c: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(in_c, out_c, 3, stride=stride, padding=1, bias=False)


class BasicBlock(nn.Module):
    """ResNet basic block: two 3x3 convs, identity or 1x1-projection skip."""

    def __init__(self, in_c: int, out_c: int, stride: int = 1):
        super().__init__()
        self.conv1 = conv3x3(in_c, out_c, stride)
        self.bn1 = nn.BatchNorm2d(out_c)
        self.conv2 = conv3x3(out_c, out_c)
        self.bn2 = nn.BatchNorm2d(out_c)
        self.relu = nn.ReLU(inplace=True)
        self.downsample = None
        if stride != 1 or in_c != out_c:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_c, out_c, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_c),
            )

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + identity)


def _stage(in_c: int, out_c: int, n_blocks: int, stride: int) -> nn.Sequential:
    layers = [BasicBlock(in_c, out_c, stride)]
    layers += [BasicBlock(out_c, out_c) for _ in range(n_blocks - 1)]
    return nn.Sequential(*layers)


class Encoder(nn.Module):
    """Maps (B, 3, H, W) images to the pyramid r_1..r_5.

    Stage 1 is the stem (3x3 conv, BN, ReLU) plus the first residual stage and
    keeps full resolution; stages 2-5 each halve it. Stage 5 is a single
    strided basic block at ``channels[4]``.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.channels
        self.stem = nn.Sequential(conv3x3(3, c[0]), nn.BatchNorm2d(c[0]), nn.ReLU(inplace=True))
        self.stages = nn.ModuleList([
            _stage(c[0], c[0], cfg.blocks[0], stride=1),
            _stage(c[0], c[1], cfg.blocks[1], stride=2),
            _stage(c[1], c[2], cfg.blocks[2], stride=2),
            _stage(c[2], c[3], cfg.blocks[3], stride=2),
            _stage(c[3], c[4], 1, stride=2),
        ])
        self.reset_parameters()

    def reset_parameters(self):
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
            elif isinstance(m, nn.BatchNorm2d):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)

    def forward(self, img: torch.Tensor) -> list[torch.Tensor]:
        check_spatial_size(img.shape[-2], img.shape[-1])
        x = self.stem(img)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats
