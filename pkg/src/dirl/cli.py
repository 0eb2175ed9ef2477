"""Command-line entry point: ``dirl <command> [flags]``.

Usage errors exit with status 2, runtime failures with status 1. Both print a
single diagnostic line to stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

import torch

from . import datagen, harness, plotting
from .types import ConfigError, ModelConfig, config_from_dict, parse_config_text

log = logging.getLogger("dirl")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _split_config(path: str | None) -> tuple[dict, dict]:
    """Read a ``key = value`` file holding ModelConfig and/or TrainConfig keys."""
    if path is None:
        return {}, {}
    values = parse_config_text(Path(path).read_text())
    model_keys = {f.name for f in fields(ModelConfig) if f.init}
    train_keys = {f.name for f in fields(harness.TrainConfig)}
    unknown = set(values) - model_keys - train_keys
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    return ({k: v for k, v in values.items() if k in model_keys},
            {k: v for k, v in values.items() if k in train_keys})


def _configs(args, row=None) -> tuple[ModelConfig, harness.TrainConfig]:
    """Config file first, then explicit flags on top. Any problem is a usage error."""
    try:
        model_vals, train_vals = _split_config(getattr(args, "config", None))
        if getattr(args, "base_width", None) is not None:
            model_vals = {k: v for k, v in model_vals.items() if k != "channels"}
            model_vals["base_width"] = str(args.base_width)
        model_cfg = config_from_dict(ModelConfig, model_vals)
        if row is not None:
            model_cfg = row.model_config(model_cfg)
        overrides = {k: str(getattr(args, k)) for k in ("epochs", "batch_size", "seed", "lr")
                     if getattr(args, k, None) is not None}
        train_cfg = config_from_dict(harness.TrainConfig, {**train_vals, **overrides})
    except (ConfigError, OSError) as exc:
        raise UsageError(str(exc)) from exc
    return model_cfg, train_cfg


def _rows(spec: str) -> list[harness.AblationRow]:
    try:
        return harness.parse_rows(spec)
    except (ConfigError, ValueError) as exc:
        raise UsageError(f"bad --rows/--row value {spec!r}: {exc}") from exc


def cmd_gen_data(args) -> None:
    samples = datagen.generate(args.seed, args.count, args.size)
    path = datagen.write_manifest(samples, args.out)
    print(f"wrote {len(samples)} samples to {path}")


def cmd_train(args) -> None:
    model_cfg, train_cfg = _configs(args, _rows(str(args.row))[0])
    samples = datagen.load_dataset(args.data)
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_suffix(".csv")
    on_epoch = lambda e, loss: log.info("epoch %d  loss %.4f", e, loss)  # noqa: E731
    res = harness.train(model_cfg, train_cfg, samples, log_path=log_path, on_epoch=on_epoch)
    harness.save_checkpoint(res.model, out)
    plotting.plot_training_log(res.log, log_path.with_suffix(".png"))
    print(f"final loss {res.final_loss:.6g}; checkpoint {out}; log {log_path}")


def cmd_eval(args) -> None:
    samples = datagen.load_dataset(args.data)
    out = Path(args.out)
    report = harness.evaluate(args.ckpt, samples, out)
    print(f"AP {report.ap:.4f}  F1 {report.f1:.4f}  IoU {report.iou:.4f}  ({len(samples)} images) -> {out}")


def _read_images(paths: list[str]) -> list[tuple[str, torch.Tensor]]:
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files += sorted(f for f in p.iterdir() if f.suffix.lower() in (".png", ".jpg", ".jpeg"))
        elif p.is_file():
            files.append(p)
        else:
            raise FileNotFoundError(f"no such image or directory: {p}")
    if not files:
        raise harness.LengthError("no input images found")
    return [(f.stem, datagen.from_uint8(datagen.read_png(f, "RGB"))) for f in files]


def cmd_predict(args) -> None:
    model = harness.load_checkpoint(args.ckpt)
    images = _read_images(args.images)
    out = Path(args.out)
    for name, img in images:
        mask = harness.predict(model, img)[0]
        plotting.save_gray_png(mask, out / f"{name}.png")
    print(f"wrote {len(images)} masks to {out}")


def cmd_ablate(args) -> None:
    rows = _rows(args.rows)
    model_cfg, train_cfg = _configs(args)
    train_samples = datagen.load_dataset(args.data)
    test_samples = datagen.load_dataset(args.test_data) if args.test_data else None
    out = Path(args.out)
    results = harness.run_ablation(rows, train_cfg, train_samples, test_samples, base=model_cfg, out_dir=out)
    plotting.plot_ablation(results, out / "ablation.png")
    print(harness.format_ablation_table(results), end="")


def cmd_export_attn(args) -> None:
    model = harness.load_checkpoint(args.ckpt)
    if args.data:
        samples = datagen.load_dataset(args.data)
        items = [(s.id, s.image, s.mask) for s in samples]
    else:
        items = [(name, img, None) for name, img in _read_images(args.image)]
    out = Path(args.out)
    for name, img, mask in items:
        _, maps = harness.predict_with_attention(model, img[None])
        if maps is None:
            raise ConfigError("checkpoint has no attention stage")
        maps = [m[0] for m in maps]
        for k, m in enumerate(maps, start=1):
            plotting.save_gray_png(m, out / name / f"A{k}.png")
        plotting.plot_attention_grid(img, maps, out / f"{name}_grid.png", mask)
    print(f"exported attention maps for {len(items)} images to {out}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dirl", description="Inharmonious-region localisation toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic composite dataset")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    def training_flags(sp):
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--batch-size", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--base-width", type=int)
        sp.add_argument("--config", help="key = value file with ModelConfig/TrainConfig fields")

    t = sub.add_parser("train", help="train one ablation row")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--log", help="training log CSV (default: next to the checkpoint)")
    t.add_argument("--row", type=int, default=10)
    training_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True, help="metrics CSV")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="write one mask PNG per input image")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--images", nargs="+", required=True)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    a = sub.add_parser("ablate", help="train and score several ablation rows")
    a.add_argument("--rows", required=True, help="comma-separated row ids, e.g. 1,3,10")
    a.add_argument("--data", required=True)
    a.add_argument("--test-data")
    a.add_argument("--out", required=True)
    training_flags(a)
    a.set_defaults(func=cmd_ablate)

    x = sub.add_parser("export-attn", help="dump spatial attention maps as grayscale PNGs")
    x.add_argument("--ckpt", required=True)
    src = x.add_mutually_exclusive_group(required=True)
    src.add_argument("--data")
    src.add_argument("--image", nargs="+")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_attn)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"dirl {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"dirl {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
