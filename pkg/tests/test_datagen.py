import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from dirl.datagen import (
    MIN_VISIBILITY,
    PERTURBATIONS,
    FormatError,
    InvalidConfig,
    apply_perturbation,
    from_uint8,
    generate,
    load_dataset,
    load_manifest,
    recompose,
    stack,
    to_uint8,
    write_manifest,
)


@pytest.fixture(scope="module")
def samples():
    return generate(seed=11, count=24, size=32)


def _equal(a, b):
    assert a.id == b.id
    assert torch.equal(a.image, b.image)
    assert torch.equal(a.mask, b.mask)
    assert a.meta == b.meta
    assert a.area == b.area
    assert (a.background is None) == (b.background is None)
    if a.background is not None:
        assert torch.equal(a.background, b.background)


def test_same_seed_is_bitwise_identical(samples):
    for a, b in zip(samples, generate(seed=11, count=24, size=32)):
        _equal(a, b)
    other = generate(seed=12, count=1, size=32)[0]
    assert not torch.equal(other.image, samples[0].image)


def test_sample_invariants(samples):
    for s in samples:
        assert s.image.shape == (3, 32, 32) and s.mask.shape == (1, 32, 32)
        assert 0 <= s.image.min() and s.image.max() <= 1
        assert set(s.mask.unique().tolist()) == {0.0, 1.0}
        assert 0.02 <= s.area <= 0.5
        assert s.area == s.mask.mean().item()
        assert s.meta["kind"] in PERTURBATIONS


def test_difference_confined_to_mask(samples):
    for s in samples:
        diff = (s.image - s.background).abs().mean(0)
        inside = s.mask[0] > 0
        assert bool((diff[~inside] == 0).all())
        assert diff[inside].mean().item() >= MIN_VISIBILITY


def test_recompose_rebuilds_every_sample(samples):
    for s in samples:
        assert torch.equal(recompose(s.background, s.mask, s.meta), s.image)


def test_brightness_by_hand():
    bg = np.full((2, 2, 3), 100, dtype=np.uint8)
    mask = torch.tensor([[[1.0, 0.0], [0.0, 0.0]]])
    out = recompose(from_uint8(bg), mask, {"kind": "brightness", "params": {"gain": 1.5}})
    assert to_uint8(out)[0, 0].tolist() == [150, 150, 150]
    assert to_uint8(out)[1, 1].tolist() == [100, 100, 100]


def test_hue_rotation_fixes_grey_and_preserves_channel_sum():
    grey = np.full((1, 1, 3), 0.4)
    assert np.allclose(apply_perturbation(grey, "hue", {"angle": 1.0}), grey)
    px = np.array([[[0.2, 0.5, 0.7]]])
    rot = apply_perturbation(px, "hue", {"angle": 2.0})
    assert rot.sum() == pytest.approx(px.sum())
    full = apply_perturbation(px, "hue", {"angle": 2 * np.pi})
    assert np.allclose(full, px)


def test_contrast_keeps_pivot():
    img = np.array([[[0.3, 0.5, 0.7]]])
    out = apply_perturbation(img, "contrast", {"factor": 2.0, "pivot": 0.5})
    assert np.allclose(out, [[[0.1, 0.5, 0.9]]])


def test_manifest_round_trip(samples, tmp_path):
    path = write_manifest(samples[:8], tmp_path / "d")
    loaded = load_manifest(path)
    assert len(loaded) == 8
    for a, b in zip(samples[:8], loaded):
        _equal(a, b)
    assert load_manifest(tmp_path / "d")[0].id == samples[0].id


def test_manifest_paths_are_relative(samples, tmp_path):
    write_manifest(samples[:2], tmp_path / "a")
    (tmp_path / "a").rename(tmp_path / "b")
    assert len(load_manifest(tmp_path / "b")) == 2


def test_truncated_manifest(samples, tmp_path):
    path = write_manifest(samples[:4], tmp_path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(FormatError):
        load_manifest(path)
    path.write_text(lines[0] + "\n" + lines[1][: len(lines[1]) // 2] + "\n")
    with pytest.raises(FormatError):
        load_manifest(path)


def test_missing_header(samples, tmp_path):
    path = write_manifest(samples[:2], tmp_path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[1:]) + "\n")
    with pytest.raises(FormatError, match="header"):
        load_manifest(path)


def test_missing_image_names_the_file(samples, tmp_path):
    path = write_manifest(samples[:3], tmp_path)
    rec = json.loads(path.read_text().splitlines()[2])
    (tmp_path / rec["image"]).unlink()
    with pytest.raises(OSError, match=rec["image"]):
        load_manifest(path)


def test_image_folder_without_manifest(samples, tmp_path):
    path = write_manifest(samples[:3], tmp_path)
    path.unlink()
    loaded = load_dataset(tmp_path)
    assert [s.id for s in loaded] == [s.id for s in samples[:3]]
    for a, b in zip(samples[:3], loaded):
        assert torch.equal(a.image, b.image) and torch.equal(a.mask, b.mask)


@pytest.mark.parametrize("bounds", [(0.3, 0.2), (0.0, 0.5), (0.1, 0.6), (0.3001, 0.3002)])
def test_impossible_area_bounds(bounds):
    with pytest.raises(InvalidConfig):
        generate(0, 2, 16, area_bounds=bounds)


def test_bad_count():
    with pytest.raises(InvalidConfig):
        generate(0, 0)


def test_stack_shapes(samples):
    x, y = stack(samples[:5])
    assert x.shape == (5, 3, 32, 32) and y.shape == (5, 1, 32, 32)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_generated_samples_always_valid(seed):
    (s,) = generate(seed, 1, 16)
    assert 0.02 <= s.area <= 0.5
    inside = s.mask[0] > 0
    diff = (s.image - s.background).abs().mean(0)
    assert bool((diff[~inside] == 0).all())
    assert diff[inside].mean().item() >= MIN_VISIBILITY
    assert torch.equal(recompose(s.background, s.mask, s.meta), s.image)
