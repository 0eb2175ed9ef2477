"""Shared tensor contracts, configuration schema and errors."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import torch

NUM_LEVELS = 5
DOWNSAMPLE_FACTOR = 2 ** (NUM_LEVELS - 1)


class ShapeError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class FusionVariant(str, enum.Enum):
    NONE = "NONE"
    AIM = "AIM"
    BFI = "BFI"
    BFI_UP = "BFI_UP"
    BFI_DOWN = "BFI_DOWN"


class AttentionVariant(str, enum.Enum):
    NONE = "NONE"
    DA = "DA"
    MDA = "MDA"


class DecoderVariant(str, enum.Enum):
    REG = "REG"
    GGD_SIM = "GGD_SIM"
    GGD = "GGD"


def default_channels(base_width: int) -> tuple[int, ...]:
    return tuple(base_width * m for m in (1, 2, 4, 8, 8))


@dataclass(frozen=True)
class ModelConfig:
    """Architecture selectors and widths.

    ``channels`` defaults to ``base_width * (1, 2, 4, 8, 8)``. ``blocks`` is the
    number of residual blocks in encoder stages 1-4 (stage 5 is always one
    strided block). The defaults are desk scale; ``ModelConfig.full()`` gives
    the ResNet34-sized network.
    """

    base_width: int = 8
    channels: tuple[int, ...] = ()
    fusion_variant: FusionVariant = FusionVariant.BFI
    attention_variant: AttentionVariant = AttentionVariant.MDA
    decoder_variant: DecoderVariant = DecoderVariant.GGD
    input_size: tuple[int, int] = (64, 64)
    blocks: tuple[int, ...] = (1, 1, 1, 1)
    reduction: int = 2

    def __post_init__(self):
        set_ = object.__setattr__
        if not self.channels:
            set_(self, "channels", default_channels(self.base_width))
        set_(self, "channels", tuple(int(c) for c in self.channels))
        set_(self, "blocks", tuple(int(b) for b in self.blocks))
        set_(self, "input_size", tuple(int(s) for s in self.input_size))
        set_(self, "fusion_variant", FusionVariant(self.fusion_variant))
        set_(self, "attention_variant", AttentionVariant(self.attention_variant))
        set_(self, "decoder_variant", DecoderVariant(self.decoder_variant))
        if self.base_width < 1:
            raise ConfigError(f"base_width must be positive, got {self.base_width}")
        if len(self.channels) != NUM_LEVELS or min(self.channels) < 1:
            raise ConfigError(f"channels must be {NUM_LEVELS} positive ints, got {self.channels}")
        if len(self.blocks) != NUM_LEVELS - 1 or min(self.blocks) < 1:
            raise ConfigError(f"blocks must be {NUM_LEVELS - 1} positive ints, got {self.blocks}")
        if len(self.input_size) != 2:
            raise ConfigError(f"input_size must be (H, W), got {self.input_size}")
        check_spatial_size(*self.input_size)
        if self.reduction < 1:
            raise ConfigError(f"reduction must be positive, got {self.reduction}")

    @classmethod
    def full(cls, **overrides) -> "ModelConfig":
        base = dict(base_width=64, blocks=(3, 4, 6, 3), reduction=16, input_size=(256, 256))
        base.update(overrides)
        return cls(**base)

    def with_variants(self, fusion=None, attention=None, decoder=None) -> "ModelConfig":
        return replace(
            self,
            fusion_variant=fusion if fusion is not None else self.fusion_variant,
            attention_variant=attention if attention is not None else self.attention_variant,
            decoder_variant=decoder if decoder is not None else self.decoder_variant,
        )

    def level_shapes(self, size: tuple[int, int] | None = None) -> list[tuple[int, int, int]]:
        h, w = size or self.input_size
        return [(c, h >> k, w >> k) for k, c in enumerate(self.channels)]


def check_spatial_size(h: int, w: int) -> None:
    if h < DOWNSAMPLE_FACTOR or w < DOWNSAMPLE_FACTOR or h % DOWNSAMPLE_FACTOR or w % DOWNSAMPLE_FACTOR:
        raise ShapeError(
            f"input size {h}x{w} must be a positive multiple of {DOWNSAMPLE_FACTOR} in both dimensions"
        )


def as_image(x) -> torch.Tensor:
    """Validate an image batch of shape (B, 3, H, W) with values in [0, 1]."""
    x = torch.as_tensor(x)
    if x.dim() != 4 or x.shape[1] != 3:
        raise ShapeError(f"image batch must be (B, 3, H, W), got {tuple(x.shape)}")
    check_spatial_size(x.shape[2], x.shape[3])
    if not x.is_floating_point():
        raise ValueError(f"image batch must be floating point, got {x.dtype}")
    _check_unit_range(x, "image")
    return x


def as_mask(x, binary: bool = False) -> torch.Tensor:
    """Validate a mask batch of shape (B, 1, h, w) with values in [0, 1]."""
    x = torch.as_tensor(x)
    if x.dim() != 4 or x.shape[1] != 1:
        raise ShapeError(f"mask batch must be (B, 1, h, w), got {tuple(x.shape)}")
    if not x.is_floating_point():
        raise ValueError(f"mask batch must be floating point, got {x.dtype}")
    _check_unit_range(x, "mask")
    if binary and not bool(((x == 0) | (x == 1)).all()):
        raise ValueError("ground-truth mask must contain only 0 and 1")
    return x


def _check_unit_range(x: torch.Tensor, what: str) -> None:
    if x.numel() and not bool(((x >= 0) & (x <= 1)).all()):
        raise ValueError(f"{what} values must lie in [0, 1] (min={x.min().item()}, max={x.max().item()})")


def validate_pyramid(
    levels: Sequence[torch.Tensor], cfg: ModelConfig, size: tuple[int, int] | None = None
) -> None:
    """Raise ShapeError unless ``levels`` is a 5-level pyramid matching ``cfg``.

    ``size`` overrides ``cfg.input_size`` for inputs of another resolution.
    """
    if len(levels) != NUM_LEVELS:
        raise ShapeError(f"pyramid must have {NUM_LEVELS} levels, got {len(levels)}")
    batch = None
    for k, (feat, expected) in enumerate(zip(levels, cfg.level_shapes(size)), start=1):
        actual = tuple(feat.shape[1:])
        if feat.dim() != 4 or actual != expected:
            raise ShapeError(f"level {k}: expected (B, {expected[0]}, {expected[1]}, {expected[2]}), got {tuple(feat.shape)}")
        if batch is None:
            batch = feat.shape[0]
        elif feat.shape[0] != batch:
            raise ShapeError(f"level {k}: batch size {feat.shape[0]} differs from level 1 ({batch})")


@dataclass(frozen=True)
class MetricReport:
    per_image: tuple[tuple[float, float, float], ...]
    ids: tuple[str, ...] = ()
    threshold: float = 0.5
    ap: float = field(init=False)
    f1: float = field(init=False)
    iou: float = field(init=False)

    def __post_init__(self):
        n = len(self.per_image)
        if n == 0:
            raise ValueError("MetricReport needs at least one image")
        if self.ids and len(self.ids) != n:
            raise ValueError("ids and per_image differ in length")
        for name, col in zip(("ap", "f1", "iou"), zip(*self.per_image)):
            object.__setattr__(self, name, sum(col) / n)

    def rows(self) -> list[tuple[str, float, float, float]]:
        ids = self.ids or tuple(str(i) for i in range(len(self.per_image)))
        return [(i, *m) for i, m in zip(ids, self.per_image)]


# --- flat "key = value" config files ---------------------------------------


def _format_value(v) -> str:
    if isinstance(v, enum.Enum):
        return v.value
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def dump_config(cfg, path: str | Path | None = None) -> str:
    text = "".join(f"{f.name} = {_format_value(getattr(cfg, f.name))}\n" for f in fields(cfg) if f.init)
    if path is not None:
        Path(path).write_text(text)
    return text


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def _coerce(kind, value: str):
    if kind in ("int",):
        return int(value)
    if kind in ("float",):
        return float(value)
    if kind.startswith("tuple"):
        return tuple(int(x) for x in value.split(",") if x.strip())
    return value


def config_from_dict(cls, values: dict[str, str]):
    known = {f.name: f for f in fields(cls) if f.init}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in values.items():
        kind = known[key].type if isinstance(known[key].type, str) else known[key].type.__name__
        try:
            kwargs[key] = _coerce(kind, value)
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {value!r}") from exc
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(cls, path: str | Path):
    return config_from_dict(cls, parse_config_text(Path(path).read_text()))
