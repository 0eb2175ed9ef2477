"""Localise the inharmonious region of a composite image.

The network encodes the image into a five-level feature pyramid, fuses
neighbouring levels, refines each level with channel and spatial attention,
and decodes a per-pixel mask.
"""

from .harness import ABLATION_ROWS, TrainConfig, evaluate, load_checkpoint, predict, save_checkpoint, train
from .model import DIRLNet
from .types import AttentionVariant, DecoderVariant, FusionVariant, MetricReport, ModelConfig

__all__ = [
    "ABLATION_ROWS",
    "AttentionVariant",
    "DIRLNet",
    "DecoderVariant",
    "FusionVariant",
    "MetricReport",
    "ModelConfig",
    "TrainConfig",
    "evaluate",
    "load_checkpoint",
    "predict",
    "save_checkpoint",
    "train",
]
