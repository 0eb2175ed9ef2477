import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from dirl.cli import main
from dirl.datagen import load_manifest


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--seed", "7", "--count", "6", "--size", "32", "--out", str(root / "d")]) == 0
    assert main(["train", "--data", str(root / "d"), "--out", str(root / "m.safetensors"),
                 "--epochs", "1", "--batch-size", "3", "--base-width", "4"]) == 0
    return root


def test_gen_data_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert main(["gen-data", "--seed", "7", "--count", "4", "--size", "32", "--out", str(tmp_path / name)]) == 0
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")
    assert len(load_manifest(tmp_path / "a" / "manifest.jsonl")) == 4


def test_train_writes_checkpoint_log_and_plot(workspace):
    assert (workspace / "m.safetensors").is_file()
    lines = (workspace / "m.csv").read_text().splitlines()
    assert lines[0] == "step,epoch,lr,bce,ssim,aux,total" and len(lines) == 3
    assert (workspace / "m.png").stat().st_size > 0


def test_eval_csv(workspace):
    out = workspace / "metrics.csv"
    assert main(["eval", "--ckpt", str(workspace / "m.safetensors"), "--data",
                 str(workspace / "d" / "manifest.jsonl"), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "image_id,ap,f1,iou"
    assert len(lines) == 1 + 6 + 1


def test_predict_one_mask_per_image(workspace):
    out = workspace / "pred"
    assert main(["predict", "--ckpt", str(workspace / "m.safetensors"),
                 "--images", str(workspace / "d" / "images"), "--out", str(out)]) == 0
    files = sorted(out.iterdir())
    assert len(files) == 6
    with Image.open(files[0]) as im:
        assert im.mode == "L" and im.size == (32, 32)


def test_export_attention(workspace):
    out = workspace / "attn"
    assert main(["export-attn", "--ckpt", str(workspace / "m.safetensors"),
                 "--data", str(workspace / "d"), "--out", str(out)]) == 0
    maps = sorted((out / "00000").iterdir())
    assert [m.name for m in maps] == [f"A{k}.png" for k in range(1, 6)]
    sizes = [Image.open(m).size for m in maps]
    assert sizes == [(32 >> k, 32 >> k) for k in range(5)]
    assert (out / "00000_grid.png").is_file()


def test_ablate_three_rows(workspace, capsys):
    out = workspace / "abl"
    assert main(["ablate", "--rows", "1,3,10", "--data", str(workspace / "d"), "--epochs", "1",
                 "--batch-size", "6", "--base-width", "4", "--out", str(out)]) == 0
    table = capsys.readouterr().out.strip().splitlines()
    assert len(table) == 2 + 3
    assert len((out / "ablation.csv").read_text().splitlines()) == 4
    assert (out / "ablation.png").is_file()


def test_config_file(workspace, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("base_width = 2\nepochs = 1\nbatch_size = 6\nlambda_aux = 0.5\n")
    assert main(["train", "--data", str(workspace / "d"), "--out", str(tmp_path / "c.safetensors"),
                 "--config", str(cfg)]) == 0
    cfg.write_text("bogus = 1\n")
    assert main(["train", "--data", str(workspace / "d"), "--out", str(tmp_path / "x.safetensors"),
                 "--config", str(cfg)]) == 2
    assert not (tmp_path / "x.safetensors").exists()


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["gen-data", "--seed", "1"],
    ["gen-data", "--seed", "1", "--count", "2", "--out", "x", "--colour", "red"],
    ["ablate", "--rows", "1,12", "--data", "d", "--out", "o"],
    ["train", "--data", "d", "--out", "o", "--epochs", "0"],
    ["export-attn", "--ckpt", "c", "--out", "o"],
])
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    err = capsys.readouterr().err.strip()
    assert err and len(err.splitlines()) == 1


def test_runtime_errors_exit_1(workspace, tmp_path, capsys):
    assert main(["eval", "--ckpt", str(tmp_path / "missing.safetensors"), "--data",
                 str(workspace / "d"), "--out", str(tmp_path / "m.csv")]) == 1
    assert "missing.safetensors" in capsys.readouterr().err
    assert main(["gen-data", "--seed", "1", "--count", "0", "--out", str(tmp_path / "g")]) == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "dirl", "gen-data", "--seed", "1", "--count", "2",
                           "--size", "16", "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    img = np.asarray(Image.open(tmp_path / "images" / "00000.png"))
    assert img.shape == (16, 16, 3)
