import pytest
import torch
from hypothesis import given, settings, strategies as st

from dirl.encoder import Encoder
from dirl.harness import TrainConfig
from dirl.types import (
    ConfigError,
    ModelConfig,
    ShapeError,
    as_image,
    as_mask,
    dump_config,
    load_config,
    validate_pyramid,
)


def pyramid(sizes, channels=(8, 16, 32, 64, 64), batch=1):
    return [torch.zeros(batch, c, s, s) for c, s in zip(channels, sizes)]


def test_validate_pyramid_accepts_exact_halving(desk_cfg):
    validate_pyramid(pyramid([64, 32, 16, 8, 4]), desk_cfg)


def test_validate_pyramid_rejects_four_levels(desk_cfg):
    with pytest.raises(ShapeError, match="5 levels"):
        validate_pyramid(pyramid([64, 32, 16, 8]), desk_cfg)


def test_validate_pyramid_names_bad_level(desk_cfg):
    with pytest.raises(ShapeError, match="level 3"):
        validate_pyramid(pyramid([64, 32, 15, 8, 4]), desk_cfg)


def test_validate_pyramid_checks_channels(desk_cfg):
    with pytest.raises(ShapeError, match="level 2"):
        validate_pyramid(pyramid([64, 32, 16, 8, 4], channels=(8, 8, 32, 64, 64)), desk_cfg)


def test_validate_pyramid_checks_batch(desk_cfg):
    p = pyramid([64, 32, 16, 8, 4])
    p[4] = torch.zeros(2, 64, 4, 4)
    with pytest.raises(ShapeError, match="batch"):
        validate_pyramid(p, desk_cfg)


@pytest.mark.parametrize("bad", [-0.01, 1.0001, float("nan")])
def test_mask_out_of_range_rejected(bad):
    x = torch.full((1, 1, 4, 4), 0.5)
    x[0, 0, 1, 2] = bad
    with pytest.raises(ValueError):
        as_mask(x)


def test_binary_mask_check():
    as_mask(torch.tensor([[[[0.0, 1.0]]]]), binary=True)
    with pytest.raises(ValueError, match="only 0 and 1"):
        as_mask(torch.tensor([[[[0.0, 0.5]]]]), binary=True)


def test_image_contract():
    as_image(torch.rand(2, 3, 32, 48))
    with pytest.raises(ShapeError):
        as_image(torch.rand(2, 3, 40, 40))
    with pytest.raises(ShapeError):
        as_image(torch.rand(2, 1, 32, 32))
    with pytest.raises(ValueError):
        as_image(torch.full((1, 3, 16, 16), 1.5))


def test_default_channel_schedule():
    assert ModelConfig().channels == (8, 16, 32, 64, 64)
    full = ModelConfig.full()
    assert full.channels == (64, 128, 256, 512, 512)
    assert full.blocks == (3, 4, 6, 3)


def test_bad_config_values():
    with pytest.raises(ConfigError):
        ModelConfig(channels=(8, 16, 32))
    with pytest.raises(ShapeError):
        ModelConfig(input_size=(40, 64))
    with pytest.raises(ValueError):
        ModelConfig(fusion_variant="FPN")


def test_config_file_round_trip(tmp_path):
    cfg = ModelConfig(base_width=4, fusion_variant="AIM", attention_variant="DA",
                      decoder_variant="GGD_SIM", input_size=(32, 48))
    path = tmp_path / "model.cfg"
    dump_config(cfg, path)
    text = path.read_text()
    assert "fusion_variant = AIM\n" in text
    assert "channels = 4,8,16,32,32\n" in text
    assert load_config(ModelConfig, path) == cfg

    tcfg = TrainConfig(epochs=3, lr=3e-4)
    dump_config(tcfg, tmp_path / "train.cfg")
    assert load_config(TrainConfig, tmp_path / "train.cfg") == tcfg


def test_config_file_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("base_width = 8\nwidth_mult = 2\n")
    with pytest.raises(ConfigError, match="width_mult"):
        load_config(ModelConfig, path)
    path.write_text("base_width 8\n")
    with pytest.raises(ConfigError, match="line 1"):
        load_config(ModelConfig, path)


@settings(max_examples=15, deadline=None)
@given(
    base=st.integers(1, 4),
    h=st.integers(1, 4),
    w=st.integers(1, 4),
    blocks=st.lists(st.integers(1, 2), min_size=4, max_size=4),
    batch=st.integers(1, 2),
)
def test_encoder_pyramids_always_validate(base, h, w, blocks, batch):
    cfg = ModelConfig(base_width=base, input_size=(16 * h, 16 * w), blocks=tuple(blocks))
    enc = Encoder(cfg).eval()
    with torch.no_grad():
        feats = enc(torch.rand(batch, 3, 16 * h, 16 * w))
    validate_pyramid(feats, cfg)
