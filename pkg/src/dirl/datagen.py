"""Synthetic composite images with a colour/lighting-perturbed foreground.

Every image is quantised to 8 bits when generated, so PNG storage is lossless
and a sample can be rebuilt bit for bit from its background, mask and
perturbation record.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from PIL import Image, ImageDraw
from scipy import ndimage

from .types import ConfigError, check_spatial_size

MIN_VISIBILITY = 0.05
AREA_BOUNDS = (0.02, 0.5)
MANIFEST_FORMAT = "dirl-manifest"
MANIFEST_VERSION = 1
PERTURBATIONS = ("brightness", "contrast", "hue", "channel_affine", "gamma")
SHAPES = ("ellipse", "polygon", "blob")
_MAX_TRIES = 1000


class InvalidConfig(ConfigError):
    pass


class FormatError(ValueError):
    pass


@dataclass
class CompositeSample:
    id: str
    image: torch.Tensor            # (3, H, W) float32 in [0, 1]
    mask: torch.Tensor             # (1, H, W) float32 in {0, 1}
    meta: dict = field(default_factory=dict)
    area: float = 0.0
    background: torch.Tensor | None = None


def to_uint8(x) -> np.ndarray:
    """float [0, 1] (C, H, W) tensor/array -> uint8 (H, W, C) array."""
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    x = np.asarray(x, dtype=np.float64)
    return np.clip(np.rint(x * 255), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def from_uint8(a: np.ndarray) -> torch.Tensor:
    """uint8 (H, W, C) array -> float32 (C, H, W) tensor."""
    return torch.from_numpy(np.ascontiguousarray(a.transpose(2, 0, 1))).float() / 255


# --- backgrounds and regions ------------------------------------------------


def _background(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    theta = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(theta) * xx + np.sin(theta) * yy
    ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-9)
    c0, c1 = rng.uniform(0.15, 0.85, size=(2, 3))
    img = c0 + ramp[..., None] * (c1 - c0)
    for scale, amp in ((max(h, w) / 4, 0.18), (max(h, w) / 12, 0.1), (1.0, 0.04)):
        noise = ndimage.gaussian_filter(rng.normal(size=(h, w, 3)), sigma=(scale, scale, 0), mode="wrap")
        noise /= max(noise.std(), 1e-9)
        img = img + amp * noise
    return np.clip(img, 0, 1)


def _ellipse(rng, h, w, cy=None, cx=None, scale=1.0):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy = rng.uniform(0.2, 0.8) * h if cy is None else cy
    cx = rng.uniform(0.2, 0.8) * w if cx is None else cx
    ry, rx = rng.uniform(0.08, 0.4, size=2) * np.array([h, w]) * scale
    t = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(t) + dy * np.sin(t)
    v = -dx * np.sin(t) + dy * np.cos(t)
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1


def _polygon(rng, h, w):
    n = int(rng.integers(5, 10))
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=n))
    radii = rng.uniform(0.1, 0.4, size=n) * min(h, w)
    cy, cx = rng.uniform(0.25, 0.75, size=2) * np.array([h, w])
    pts = [(float(cx + r * np.cos(a)), float(cy + r * np.sin(a))) for a, r in zip(angles, radii)]
    canvas = Image.new("L", (w, h), 0)
    ImageDraw.Draw(canvas).polygon(pts, fill=1)
    return np.asarray(canvas, dtype=bool)


def _blob(rng, h, w):
    cy, cx = rng.uniform(0.3, 0.7, size=2) * np.array([h, w])
    mask = np.zeros((h, w), dtype=bool)
    for _ in range(int(rng.integers(2, 5))):
        oy, ox = rng.normal(scale=0.1, size=2) * np.array([h, w])
        mask |= _ellipse(rng, h, w, cy + oy, cx + ox, scale=0.6)
    return mask


def _region(rng, h, w, bounds) -> tuple[np.ndarray, str]:
    lo, hi = bounds
    for _ in range(_MAX_TRIES):
        shape = SHAPES[int(rng.integers(len(SHAPES)))]
        mask = {"ellipse": _ellipse, "polygon": _polygon, "blob": _blob}[shape](rng, h, w)
        if lo <= mask.mean() <= hi:
            return mask, shape
    raise InvalidConfig(f"could not sample a region with area fraction in [{lo}, {hi}]")


# --- perturbations ------------------------------------------------------------


def _hue_matrix(angle: float) -> np.ndarray:
    # rotation about the grey axis (1, 1, 1)/sqrt(3)
    c, s = math.cos(angle), math.sin(angle)
    k = 1 / math.sqrt(3)
    a = (1 - c) / 3
    return np.array([
        [c + a, a - k * s, a + k * s],
        [a + k * s, c + a, a - k * s],
        [a - k * s, a + k * s, c + a],
    ])


def apply_perturbation(img: np.ndarray, kind: str, params: dict) -> np.ndarray:
    """Apply a recorded perturbation to a float (H, W, 3) image; no clamping."""
    if kind == "brightness":
        return img * params["gain"]
    if kind == "contrast":
        return (img - params["pivot"]) * params["factor"] + params["pivot"]
    if kind == "hue":
        return img @ _hue_matrix(params["angle"]).T
    if kind == "channel_affine":
        return img * np.asarray(params["scale"]) + np.asarray(params["shift"])
    if kind == "gamma":
        return np.power(img, params["gamma"])
    raise ValueError(f"unknown perturbation {kind!r}")


def _two_sided(rng, low_range, high_range) -> float:
    lo, hi = low_range if rng.random() < 0.5 else high_range
    return float(rng.uniform(lo, hi))


def _sample_params(rng, kind: str, fg: np.ndarray) -> dict:
    if kind == "brightness":
        return {"gain": _two_sided(rng, (0.45, 0.8), (1.25, 1.7))}
    if kind == "contrast":
        return {"factor": _two_sided(rng, (0.3, 0.65), (1.5, 2.5)), "pivot": float(fg.mean())}
    if kind == "hue":
        return {"angle": float(rng.choice([-1, 1]) * rng.uniform(np.pi / 6, 5 * np.pi / 6))}
    if kind == "channel_affine":
        return {"scale": rng.uniform(0.6, 1.4, size=3).round(6).tolist(),
                "shift": rng.uniform(-0.2, 0.2, size=3).round(6).tolist()}
    if kind == "gamma":
        return {"gamma": _two_sided(rng, (0.35, 0.7), (1.5, 2.8))}
    raise ValueError(kind)


def _quantise(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.clip(img, 0, 1) * 255), 0, 255).astype(np.uint8)


def _composite(bg_u8: np.ndarray, mask: np.ndarray, kind: str, params: dict) -> np.ndarray:
    pert = _quantise(apply_perturbation(bg_u8 / 255.0, kind, params))
    return np.where(mask[..., None], pert, bg_u8)


def recompose(background: torch.Tensor, mask: torch.Tensor, meta: dict) -> torch.Tensor:
    """Rebuild a composite from its background, mask and perturbation record."""
    bg = to_uint8(background)
    m = mask.detach().cpu().numpy()[0] > 0.5
    return from_uint8(_composite(bg, m, meta["kind"], meta["params"]))


def _check_generate_args(count: int, bounds) -> None:
    if count < 1:
        raise InvalidConfig(f"count must be >= 1, got {count}")
    lo, hi = bounds
    if not (0 < lo <= hi <= AREA_BOUNDS[1]):
        raise InvalidConfig(f"area bounds must satisfy 0 < lo <= hi <= 0.5, got {bounds}")


def generate(seed: int, count: int, size=64, area_bounds=AREA_BOUNDS,
             min_visibility: float = MIN_VISIBILITY) -> list[CompositeSample]:
    """Deterministically generate ``count`` composites of ``size`` (int or (H, W))."""
    h, w = (size, size) if isinstance(size, int) else tuple(size)
    check_spatial_size(h, w)
    _check_generate_args(count, area_bounds)
    if math.ceil(area_bounds[0] * h * w) > math.floor(area_bounds[1] * h * w):
        raise InvalidConfig(f"no pixel count satisfies area bounds {area_bounds} at {h}x{w}")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(count):
        bg = _quantise(_background(rng, h, w))
        mask, shape = _region(rng, h, w, area_bounds)
        for _ in range(_MAX_TRIES):
            kind = PERTURBATIONS[int(rng.integers(len(PERTURBATIONS)))]
            params = _sample_params(rng, kind, bg[mask] / 255.0)
            img = _composite(bg, mask, kind, params)
            visibility = float(np.abs(img[mask].astype(np.float64) - bg[mask]).mean() / 255)
            if visibility >= min_visibility:
                break
        else:
            raise InvalidConfig(f"sample {i}: no perturbation reached visibility {min_visibility}")
        samples.append(CompositeSample(
            id=f"{i:05d}",
            image=from_uint8(img),
            mask=torch.from_numpy(mask[None].astype(np.float32)),
            meta={"kind": kind, "params": params, "shape": shape, "visibility": visibility},
            area=float(mask.mean()),
            background=from_uint8(bg),
        ))
    return samples


# --- manifest -----------------------------------------------------------------


def _save_png(arr: np.ndarray, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr[..., 0] if arr.shape[-1] == 1 else arr).save(path, format="PNG")


def read_png(path: Path, mode: str) -> np.ndarray:
    if not path.is_file():
        raise FileNotFoundError(f"missing file referenced by manifest: {path}")
    with Image.open(path) as im:
        arr = np.array(im.convert(mode))
    return arr[..., None] if arr.ndim == 2 else arr


def write_manifest(samples: Sequence[CompositeSample], directory: str | Path) -> Path:
    """Write PNGs plus a JSON-lines manifest (header line, then one record per sample)."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps({"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION, "count": len(samples)})]
    for s in samples:
        rec = {"id": s.id, "image": f"images/{s.id}.png", "mask": f"masks/{s.id}.png",
               "background": None, "meta": s.meta, "area": s.area}
        _save_png(to_uint8(s.image), root / rec["image"])
        _save_png(to_uint8(s.mask), root / rec["mask"])
        if s.background is not None:
            rec["background"] = f"backgrounds/{s.id}.png"
            _save_png(to_uint8(s.background), root / rec["background"])
        lines.append(json.dumps(rec, sort_keys=True))
    path = root / "manifest.jsonl"
    path.write_text("\n".join(lines) + "\n")
    return path


def resolve_manifest(path: str | Path) -> Path:
    path = Path(path)
    return path / "manifest.jsonl" if path.is_dir() else path


def load_manifest(path: str | Path) -> list[CompositeSample]:
    path = resolve_manifest(path)
    root = path.parent
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty manifest")
    try:
        records = [json.loads(ln) for ln in lines]
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed line ({exc})") from exc
    header, records = records[0], records[1:]
    if not isinstance(header, dict) or header.get("format") != MANIFEST_FORMAT:
        raise FormatError(f"{path}: missing manifest header")
    if header.get("count") != len(records):
        raise FormatError(f"{path}: header announces {header.get('count')} records, found {len(records)}")
    samples = []
    for n, rec in enumerate(records, start=2):
        if not isinstance(rec, dict) or not {"id", "image", "mask"} <= rec.keys():
            raise FormatError(f"{path}:{n}: record lacks id/image/mask")
        mask = read_png(root / rec["mask"], "L")
        if not np.isin(mask, (0, 255)).all():
            raise FormatError(f"{path}:{n}: mask {rec['mask']} is not binary")
        bg = rec.get("background")
        samples.append(CompositeSample(
            id=str(rec["id"]),
            image=from_uint8(read_png(root / rec["image"], "RGB")),
            mask=from_uint8(mask),
            meta=rec.get("meta") or {},
            area=float(rec.get("area", (mask > 0).mean())),
            background=from_uint8(read_png(root / bg, "RGB")) if bg else None,
        ))
    return samples


def load_image_folder(directory: str | Path) -> list[CompositeSample]:
    """Pair ``images/<name>.*`` with ``masks/<name>.png`` under ``directory``.

    For user-supplied data without a manifest. Masks are binarised at 128.
    """
    root = Path(directory)
    images = sorted(p for p in (root / "images").glob("*") if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    if not images:
        raise FormatError(f"{root}: no images/ directory with pictures")
    samples = []
    for p in images:
        mask = (read_png(root / "masks" / f"{p.stem}.png", "L") >= 128).astype(np.uint8) * 255
        samples.append(CompositeSample(
            id=p.stem, image=from_uint8(read_png(p, "RGB")), mask=from_uint8(mask), area=float((mask > 0).mean()),
        ))
    return samples


def load_dataset(path: str | Path) -> list[CompositeSample]:
    """A manifest file, a directory holding one, or an images/ + masks/ folder."""
    path = Path(path)
    if path.is_dir() and not (path / "manifest.jsonl").exists():
        return load_image_folder(path)
    return load_manifest(path)


def stack(samples: Sequence[CompositeSample]) -> tuple[torch.Tensor, torch.Tensor]:
    """Batch samples into (B, 3, H, W) images and (B, 1, H, W) masks."""
    return torch.stack([s.image for s in samples]), torch.stack([s.mask for s in samples])
