import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wsi_benchkit.preproc import (
    AUGMENTATION_KINDS,
    AugmentationSpec,
    apply_augmentation,
    sample_spec,
)
from wsi_benchkit.preproc.synthimg import synthetic_stain_image
from wsi_benchkit.preproc.tile import Patch


def make_patch(size=32, seed=0):
    gen = np.random.default_rng(seed)
    return Patch(pixels=synthetic_stain_image(gen, size, size), slide_id="s", grid_pos=(0, 0))


def apply_kind(patch, kind, seed=0):
    return apply_augmentation(patch, sample_spec(kind, rng_seed=seed))


def test_catalogue_has_27_kinds():
    assert len(AUGMENTATION_KINDS) == 27
    assert len(set(AUGMENTATION_KINDS)) == 27


def test_rotate90_four_times_is_identity():
    patch = make_patch()
    out = patch
    spec = AugmentationSpec("rotate90")
    for _ in range(4):
        out = apply_augmentation(out, spec)
    assert np.array_equal(out.pixels, patch.pixels)


@pytest.mark.parametrize("kind", ["flip_h", "flip_v"])
def test_flip_twice_is_identity(kind):
    patch = make_patch()
    spec = AugmentationSpec(kind)
    out = apply_augmentation(apply_augmentation(patch, spec), spec)
    assert np.array_equal(out.pixels, patch.pixels)


def test_rotate180_equals_both_flips():
    patch = make_patch()
    rotated = apply_augmentation(patch, AugmentationSpec("rotate180"))
    flipped = apply_augmentation(apply_augmentation(patch, AugmentationSpec("flip_h")),
                                 AugmentationSpec("flip_v"))
    assert np.array_equal(rotated.pixels, flipped.pixels)


def test_rotate90_then_270_is_identity():
    patch = make_patch()
    out = apply_augmentation(apply_augmentation(patch, AugmentationSpec("rotate90")),
                             AugmentationSpec("rotate270"))
    assert np.array_equal(out.pixels, patch.pixels)


@pytest.mark.parametrize("kind", AUGMENTATION_KINDS)
def test_deterministic_and_shape_preserving(kind):
    patch = make_patch()
    a = apply_kind(patch, kind, seed=7)
    b = apply_kind(patch, kind, seed=7)
    assert np.array_equal(a.pixels, b.pixels)
    assert a.pixels.shape == patch.pixels.shape
    assert a.pixels.dtype == np.uint8


def test_different_seed_changes_stochastic_kinds():
    patch = make_patch()
    for kind in ("random_rotation", "jigsaw", "cutout", "colour_jitter"):
        a = apply_kind(patch, kind, seed=1)
        b = apply_kind(patch, kind, seed=2)
        assert not np.array_equal(a.pixels, b.pixels), kind


@settings(max_examples=1000, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_sampled_parameter_ranges(seed):
    rot = sample_spec("random_rotation", seed)
    assert 10.0 <= rot.params["angle"] % 90.0 <= 80.0
    cut = sample_spec("cutout", seed)
    area = cut.params["frac_w"] * cut.params["frac_h"]
    assert 0.02 <= area <= 0.25
    assert 0.0 <= cut.params["frac_x"] <= 1.0 - cut.params["frac_w"]
    aff = sample_spec("affine", seed)
    assert abs(aff.params["rotation"]) <= 10.0
    assert abs(aff.params["translate_x"]) <= 0.2
    assert abs(aff.params["translate_y"]) <= 0.2
    assert 0.8 <= aff.params["scale"] <= 1.2
    assert abs(aff.params["shear"]) <= 10.0
    warp = sample_spec("warp_perspective", seed)
    assert all(0.0 <= d <= 0.2 for corner in warp.params["corner_shift"] for d in corner)
    jit = sample_spec("colour_jitter", seed)
    for field in ("brightness", "contrast", "saturation"):
        assert 0.6 <= jit.params[field] <= 1.4
    assert abs(jit.params["hue"]) <= 0.1


def test_zoom_marker_centered_and_scaled():
    size = 64
    pixels = np.zeros((size, size, 3), dtype=np.uint8)
    lo, hi = size // 2 - 4, size // 2 + 4  # 8x8 centred marker
    pixels[lo:hi, lo:hi] = 255
    patch = Patch(pixels=pixels, slide_id="s", grid_pos=(0, 0))
    out = apply_augmentation(patch, AugmentationSpec("zoom_1_5")).pixels[..., 0]
    ys, xs = np.nonzero(out > 127)
    centre = (ys.mean(), xs.mean())
    assert abs(centre[0] - (size - 1) / 2) <= 1.5
    assert abs(centre[1] - (size - 1) / 2) <= 1.5
    extent = ys.max() - ys.min() + 1
    assert 1.3 <= extent / 8.0 <= 1.7


def test_rotation_has_black_corners_and_crop_removes_them():
    patch = Patch(pixels=np.full((64, 64, 3), 200, dtype=np.uint8),
                  slide_id="s", grid_pos=(0, 0))
    spec = AugmentationSpec("random_rotation", {"angle": 45.0, "centre_crop": False})
    out = apply_augmentation(patch, spec).pixels
    assert out[0, 0].max() == 0  # corner falls outside the rotated content
    cropped = apply_augmentation(
        patch, AugmentationSpec("random_rotation", {"angle": 45.0, "centre_crop": True})).pixels
    assert cropped.min() >= 190


def test_cutout_zeroes_a_rectangle():
    patch = Patch(pixels=np.full((32, 32, 3), 255, dtype=np.uint8),
                  slide_id="s", grid_pos=(0, 0))
    out = apply_kind(patch, "cutout", seed=3).pixels
    zero_frac = (out == 0).all(axis=-1).mean()
    assert 0.015 <= zero_frac <= 0.3


def test_jigsaw_is_a_permutation():
    patch = make_patch(32)
    out = apply_kind(patch, "jigsaw", seed=4).pixels
    assert not np.array_equal(out, patch.pixels)
    assert sorted(out.reshape(-1).tolist()) == sorted(patch.pixels.reshape(-1).tolist())


def test_brightness_monotone():
    patch = make_patch()
    low = apply_kind(patch, "brightness_low").pixels
    high = apply_kind(patch, "brightness_high").pixels
    assert low.mean() < patch.pixels.mean() < high.mean()


def test_gamma_darkens_and_brightens():
    patch = make_patch()
    dark = apply_kind(patch, "gamma_2_0").pixels
    bright = apply_kind(patch, "gamma_0_5").pixels
    assert dark.mean() < patch.pixels.mean() < bright.mean()


def test_saturation_low_moves_towards_gray():
    patch = make_patch()
    out = apply_kind(patch, "saturation_low").pixels.astype(float)
    orig = patch.pixels.astype(float)
    assert out.std(axis=-1).mean() < orig.std(axis=-1).mean()


def test_blurs_reduce_variation():
    patch = make_patch()
    for kind in ("gaussian_blur", "median_blur"):
        out = apply_kind(patch, kind).pixels.astype(float)
        assert np.abs(np.diff(out, axis=0)).mean() < np.abs(
            np.diff(patch.pixels.astype(float), axis=0)).mean(), kind
