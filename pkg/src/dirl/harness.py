"""Training, checkpointing, evaluation and the ablation runner."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import torch
from safetensors import safe_open
from safetensors.torch import save_file

from .datagen import CompositeSample, stack
from .losses import total_loss
from .metrics import evaluate_dataset, write_metrics_csv
from .model import DIRLNet, count_parameters
from .types import (
    AttentionVariant,
    ConfigError,
    DecoderVariant,
    FusionVariant,
    MetricReport,
    ModelConfig,
    config_from_dict,
    dump_config,
    parse_config_text,
)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "dirl-checkpoint/1"
LOG_FIELDS = ("step", "epoch", "lr", "bce", "ssim", "aux", "total")


class TrainingError(RuntimeError):
    pass


class LengthError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-4
    decay_epoch: int = 30
    decay_factor: float = 0.5
    epochs: int = 200
    batch_size: int = 4
    seed: int = 0
    lambda_aux: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "seed":
                if v < 0:
                    raise ConfigError(f"seed must be non-negative, got {v}")
            elif not v > 0:
                raise ConfigError(f"{f.name} must be positive, got {v}")
        if not 0 < self.decay_factor < 1:
            raise ConfigError(f"decay_factor must lie in (0, 1), got {self.decay_factor}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("Adam betas must lie in (0, 1)")


# Desk-scale recipe: 16 samples at batch 4 give only 4 updates per epoch, so the
# large-dataset schedule above (1e-4, halved every 30 epochs) barely moves the
# weights in 200 epochs. Same optimiser and halving, larger step, later decay.
DESK_TRAIN = TrainConfig(lr=1e-3, decay_epoch=100)


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for 1-based ``epoch``: halved after every ``decay_epoch`` epochs."""
    return cfg.lr * cfg.decay_factor ** ((epoch - 1) // cfg.decay_epoch)


# --- ablation matrix ----------------------------------------------------------


@dataclass(frozen=True)
class AblationRow:
    id: int
    transition: FusionVariant
    refine: AttentionVariant
    decoder: DecoderVariant

    def model_config(self, base: ModelConfig | None = None) -> ModelConfig:
        return (base or ModelConfig()).with_variants(self.transition, self.refine, self.decoder)

    @property
    def label(self) -> str:
        parts = [p.value for p in (self.transition, self.refine) if p.value != "NONE"]
        return "+".join(parts + [self.decoder.value])


_F, _A, _D = FusionVariant, AttentionVariant, DecoderVariant
ABLATION_ROWS = {
    row.id: row
    for row in (
        AblationRow(1, _F.NONE, _A.NONE, _D.REG),
        AblationRow(2, _F.NONE, _A.NONE, _D.GGD_SIM),
        AblationRow(3, _F.NONE, _A.NONE, _D.GGD),
        AblationRow(4, _F.AIM, _A.NONE, _D.GGD),
        AblationRow(5, _F.BFI_DOWN, _A.NONE, _D.GGD),
        AblationRow(6, _F.BFI_UP, _A.NONE, _D.GGD),
        AblationRow(7, _F.BFI, _A.NONE, _D.GGD),
        AblationRow(8, _F.NONE, _A.DA, _D.GGD),
        AblationRow(9, _F.NONE, _A.MDA, _D.GGD),
        AblationRow(10, _F.BFI, _A.MDA, _D.GGD),
    )
}


def parse_rows(spec: str | Sequence[int]) -> list[AblationRow]:
    ids = [int(x) for x in spec.split(",") if x.strip()] if isinstance(spec, str) else list(spec)
    bad = [i for i in ids if i not in ABLATION_ROWS]
    if bad or not ids:
        raise ConfigError(f"ablation rows must be drawn from 1..10, got {ids}")
    return [ABLATION_ROWS[i] for i in ids]


# --- training -----------------------------------------------------------------


@dataclass
class TrainResult:
    model: DIRLNet
    log: list[dict]

    @property
    def final_loss(self) -> float:
        return self.log[-1]["total"]

    def epoch_means(self) -> list[float]:
        sums: dict[int, list[float]] = {}
        for row in self.log:
            sums.setdefault(row["epoch"], []).append(row["total"])
        return [sum(v) / len(v) for _, v in sorted(sums.items())]


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    samples: Sequence[CompositeSample],
    log_path: str | Path | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Train a fresh network; deterministic for a fixed seed on one thread.

    The auxiliary attention loss is only applied for the MDA variant.
    """
    if not samples:
        raise LengthError("cannot train on an empty dataset")
    images, masks = stack(samples)
    if tuple(images.shape[-2:]) != model_cfg.input_size:
        model_cfg = ModelConfig(**{**_cfg_kwargs(model_cfg), "input_size": tuple(images.shape[-2:])})
    torch.manual_seed(train_cfg.seed)
    model = DIRLNet(model_cfg)
    opt = torch.optim.Adam(
        model.parameters(), lr=train_cfg.lr, betas=(train_cfg.beta1, train_cfg.beta2),
        weight_decay=train_cfg.weight_decay,
    )
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=train_cfg.decay_epoch, gamma=train_cfg.decay_factor)
    lam = train_cfg.lambda_aux if model_cfg.attention_variant is AttentionVariant.MDA else 0.0
    order = torch.Generator().manual_seed(train_cfg.seed)
    n = len(samples)
    rows: list[dict] = []
    step = 0
    model.train()
    for epoch in range(1, train_cfg.epochs + 1):
        lr = opt.param_groups[0]["lr"]
        perm = torch.randperm(n, generator=order)
        for start in range(0, n, train_cfg.batch_size):
            idx = perm[start:start + train_cfg.batch_size]
            out = model.run(images[idx])
            losses = total_loss(out.mask, out.attention, masks[idx], lam)
            values = losses.as_floats()
            if not all(math.isfinite(v) for v in values.values()):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {step + 1}: {values}")
            opt.zero_grad()
            losses.total.backward()
            opt.step()
            step += 1
            rows.append({"step": step, "epoch": epoch, "lr": lr, **values})
        sched.step()
        if on_epoch is not None:
            on_epoch(epoch, rows[-1]["total"])
    model.eval()
    if log_path is not None:
        write_training_log(rows, log_path)
    return TrainResult(model, rows)


def write_training_log(rows: Sequence[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(r[k]) if isinstance(r[k], float) else r[k] for k in LOG_FIELDS})
    return path


def read_training_log(path: str | Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return [
            {k: (int(v) if k in ("step", "epoch") else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


# --- checkpoints ----------------------------------------------------------------


def _cfg_kwargs(cfg: ModelConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(cfg) if f.init}


def save_checkpoint(model: DIRLNet, path: str | Path) -> Path:
    """Write a safetensors file: parameter/buffer names -> tensors, config in metadata."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = {k: v.detach().contiguous().clone() for k, v in model.state_dict().items()}
    save_file(state, str(path), metadata={"format": CHECKPOINT_FORMAT, "model_config": dump_config(model.cfg)})
    return path


def load_checkpoint(path: str | Path, cfg: ModelConfig | None = None) -> DIRLNet:
    """Rebuild a network from a checkpoint; ``cfg``, if given, must match the stored one."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with safe_open(str(path), framework="pt") as fh:
        meta = fh.metadata() or {}
        state = {k: fh.get_tensor(k) for k in fh.keys()}
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    stored = config_from_dict(ModelConfig, parse_config_text(meta["model_config"]))
    if cfg is not None and cfg != stored:
        raise ConfigError(f"{path}: checkpoint config {stored} does not match requested {cfg}")
    model = DIRLNet(stored)
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise ConfigError(f"{path}: parameters do not match the stored config: {exc}") from exc
    return model.eval()


def _as_model(model_or_path) -> DIRLNet:
    if isinstance(model_or_path, DIRLNet):
        return model_or_path.eval()
    return load_checkpoint(model_or_path)


# --- inference ------------------------------------------------------------------


@torch.no_grad()
def predict(model_or_path, images: torch.Tensor, batch_size: int = 8) -> torch.Tensor:
    model = _as_model(model_or_path)
    if images.dim() == 3:
        images = images[None]
    outs = [model(images[i:i + batch_size]) for i in range(0, len(images), batch_size)]
    return torch.cat(outs)


@torch.no_grad()
def predict_with_attention(model_or_path, images: torch.Tensor):
    model = _as_model(model_or_path)
    out = model.run(images)
    return out.mask, out.attention


def evaluate(model_or_path, samples: Sequence[CompositeSample], csv_path: str | Path | None = None,
             threshold: float = 0.5) -> MetricReport:
    if not samples:
        raise LengthError("cannot evaluate an empty dataset")
    images, masks = stack(samples)
    preds = predict(model_or_path, images)
    report = evaluate_dataset(list(preds), list(masks), ids=[s.id for s in samples], threshold=threshold)
    if csv_path is not None:
        write_metrics_csv(report, csv_path)
    return report


# --- ablation -------------------------------------------------------------------


@dataclass
class AblationResult:
    row: AblationRow
    report: MetricReport
    parameters: int
    final_loss: float


def run_ablation(
    rows: Sequence[AblationRow],
    train_cfg: TrainConfig,
    train_samples: Sequence[CompositeSample],
    test_samples: Sequence[CompositeSample] | None = None,
    base: ModelConfig | None = None,
    out_dir: str | Path | None = None,
) -> list[AblationResult]:
    """Train and evaluate each row with the same seed and data.

    Without ``test_samples`` the rows are scored on the training set.
    """
    test_samples = test_samples if test_samples is not None else train_samples
    results = []
    for row in rows:
        cfg = row.model_config(base)
        log.info("ablation row %d (%s)", row.id, row.label)
        log_path = Path(out_dir) / f"row{row.id:02d}_train.csv" if out_dir else None
        res = train(cfg, train_cfg, train_samples, log_path=log_path)
        report = evaluate(res.model, test_samples)
        results.append(AblationResult(row, report, count_parameters(res.model), res.final_loss))
        if out_dir:
            save_checkpoint(res.model, Path(out_dir) / f"row{row.id:02d}.safetensors")
    if out_dir:
        write_ablation_csv(results, Path(out_dir) / "ablation.csv")
        (Path(out_dir) / "ablation.txt").write_text(format_ablation_table(results))
    return results


ABLATION_HEADER = ("row", "transition", "refine", "decoder", "ap", "f1", "iou", "params")


def _ablation_cells(r: AblationResult) -> list[str]:
    dash = lambda v: "-" if v.value == "NONE" else v.value  # noqa: E731
    return [str(r.row.id), dash(r.row.transition), dash(r.row.refine), r.row.decoder.value,
            f"{100 * r.report.ap:.2f}", f"{r.report.f1:.4f}", f"{100 * r.report.iou:.2f}", str(r.parameters)]


def write_ablation_csv(results: Sequence[AblationResult], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ABLATION_HEADER)
        for r in results:
            w.writerow([r.row.id, r.row.transition.value, r.row.refine.value, r.row.decoder.value,
                        repr(r.report.ap), repr(r.report.f1), repr(r.report.iou), r.parameters])
    return path


def format_ablation_table(results: Sequence[AblationResult]) -> str:
    """Aligned text table; AP and IoU in percent, F1 as a fraction."""
    header = ["#", "Transition", "Refine", "Decoder", "AP(%)", "F1", "IoU(%)", "Params"]
    body = [_ablation_cells(r) for r in results]
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    fmt = lambda cells: "  ".join(c.rjust(w) for c, w in zip(cells, widths))  # noqa: E731
    lines = [fmt(header), "  ".join("-" * w for w in widths)] + [fmt(b) for b in body]
    return "\n".join(lines) + "\n"
