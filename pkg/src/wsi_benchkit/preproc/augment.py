"""The 27-transform augmentation catalogue.

A spec is a (kind, params, rng_seed) record; applying the same spec to the
same patch always produces the same bytes.  Stochastic kinds draw their
parameters once, at ``sample_spec`` time, into the params record, so the
declared ranges hold by construction:

* random rotation angle b with (b mod 90) in [10, 80] degrees,
* cutout rectangle covering 2..25% of the area,
* affine: rotation <= 10 deg, translation <= 20%, scale within +-20%,
  shear <= 10 deg,
* perspective corner distortion <= 0.2,
* colour jitter factors within +-0.4 (brightness/contrast/saturation)
  and +-0.1 hue.

Geometric transforms resample bilinearly with reflect padding, except
off-axis rotation, which keeps its black corners on purpose (the lost-edge
effect is part of what the latent analysis measures); ``centre_crop=True``
on a rotation spec is the ablation that removes them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .. import rng as rngmod
from ..errors import DimensionMismatch, InsufficientTissue, DegenerateCovariance
from .macenko import DEFAULT_REFERENCE, macenko_fit, macenko_normalise
from .tile import Patch

AUGMENTATION_KINDS = (
    "macenko_patch",
    "rotate90", "rotate180", "rotate270", "random_rotation",
    "flip_h", "flip_v",
    "zoom_1_5", "zoom_1_75", "zoom_2",
    "affine", "warp_perspective", "jigsaw", "cutout", "augmix",
    "brightness_low", "brightness_high",
    "contrast_low", "contrast_high",
    "saturation_low", "saturation_high",
    "colour_jitter", "gamma_0_5", "gamma_2_0",
    "sharpen", "gaussian_blur", "median_blur",
)

_STOCHASTIC = {"random_rotation", "affine", "warp_perspective", "jigsaw",
               "cutout", "augmix", "colour_jitter"}


@dataclass(frozen=True)
class AugmentationSpec:
    kind: str
    params: dict = field(default_factory=dict)
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in AUGMENTATION_KINDS:
            raise DimensionMismatch(f"unknown augmentation kind {self.kind!r}")


def sample_spec(kind: str, rng_seed: int = 0) -> AugmentationSpec:
    """Draw the stochastic parameters of a kind into a concrete spec."""
    gen = rngmod.substream(rng_seed, "augspec", kind)
    params: dict = {}
    if kind == "random_rotation":
        quadrant = int(gen.integers(0, 4))
        offset = float(gen.uniform(10.0, 80.0))
        params = {"angle": 90.0 * quadrant + offset, "centre_crop": False}
    elif kind == "affine":
        params = {
            "rotation": float(gen.uniform(-10.0, 10.0)),
            "translate_x": float(gen.uniform(-0.2, 0.2)),
            "translate_y": float(gen.uniform(-0.2, 0.2)),
            "scale": float(gen.uniform(0.8, 1.2)),
            "shear": float(gen.uniform(-10.0, 10.0)),
        }
    elif kind == "warp_perspective":
        params = {"corner_shift": [[float(gen.uniform(0.0, 0.2)) for _ in range(2)]
                                   for _ in range(4)]}
    elif kind == "cutout":
        area = float(gen.uniform(0.02, 0.25))
        aspect = float(gen.uniform(0.5, 2.0))
        fw = min(np.sqrt(area * aspect), 1.0)
        fh = min(area / fw, 1.0)
        params = {
            "frac_w": float(fw),
            "frac_h": float(fh),
            "frac_x": float(gen.uniform(0.0, 1.0 - fw)),
            "frac_y": float(gen.uniform(0.0, 1.0 - fh)),
        }
    elif kind == "colour_jitter":
        params = {
            "brightness": float(gen.uniform(0.6, 1.4)),
            "contrast": float(gen.uniform(0.6, 1.4)),
            "saturation": float(gen.uniform(0.6, 1.4)),
            "hue": float(gen.uniform(-0.1, 0.1)),
        }
    return AugmentationSpec(kind=kind, params=params, rng_seed=rng_seed)


def _to_float(img):
    return img.astype(np.float64)


def _to_uint8(img):
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _luminance(img):
    return img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114


def _brightness(img, factor):
    return _to_uint8(_to_float(img) * factor)


def _contrast(img, factor):
    f = _to_float(img)
    mean = _luminance(f).mean()
    return _to_uint8(mean + factor * (f - mean))


def _saturation(img, factor):
    f = _to_float(img)
    gray = _luminance(f)[..., None]
    return _to_uint8(gray + factor * (f - gray))


def _gamma(img, exponent):
    f = _to_float(img) / 255.0
    return _to_uint8(255.0 * np.power(f, exponent))


def _sharpen(img, factor=5.0):
    kernel = np.array([[1.0, 1.0, 1.0], [1.0, 5.0, 1.0], [1.0, 1.0, 1.0]]) / 13.0
    f = _to_float(img)
    smooth = np.stack([ndimage.convolve(f[..., c], kernel, mode="nearest")
                       for c in range(3)], axis=-1)
    return _to_uint8(smooth + factor * (f - smooth))


def _gaussian_blur(img, sigma=2.0, radius=2):
    f = _to_float(img)
    out = np.stack([ndimage.gaussian_filter(f[..., c], sigma=sigma,
                                            truncate=radius / sigma, mode="nearest")
                    for c in range(3)], axis=-1)
    return _to_uint8(out)


def _median_blur(img, size=5):
    return np.stack([ndimage.median_filter(img[..., c], size=size, mode="nearest")
                     for c in range(3)], axis=-1)


def _rgb_to_hsv(f):
    r, g, b = f[..., 0], f[..., 1], f[..., 2]
    maxc = np.max(f, axis=-1)
    minc = np.min(f, axis=-1)
    v = maxc
    span = maxc - minc
    s = np.where(maxc > 0, span / np.maximum(maxc, 1e-12), 0.0)
    safe = np.maximum(span, 1e-12)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(span == 0.0, 0.0, (h / 6.0) % 1.0)
    return h, s, v


def _hsv_to_rgb(h, s, v):
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def _hue_shift(img, shift):
    f = _to_float(img) / 255.0
    h, s, v = _rgb_to_hsv(f)
    rgb = _hsv_to_rgb((h + shift) % 1.0, s, v)
    return _to_uint8(rgb * 255.0)


def _rotate(img, angle, centre_crop=False):
    f = _to_float(img)
    out = np.stack([ndimage.rotate(f[..., c], -angle, reshape=False, order=1,
                                   mode="constant", cval=0.0) for c in range(3)], axis=-1)
    out = _to_uint8(out)
    if centre_crop:
        # largest centred square free of rotation fill for any angle, shrunk
        # past the bilinear reach at the content boundary
        size = img.shape[0]
        keep = max(1, int(np.floor(size / np.sqrt(2.0))) - 2)
        start = (size - keep) // 2
        crop = out[start:start + keep, start:start + keep]
        return _zoom_to(crop, size)
    return out


def _zoom_to(img, size):
    f = _to_float(img)
    scale = img.shape[0] / size
    c_out = (size - 1) / 2.0
    c_in = (img.shape[0] - 1) / 2.0
    matrix = np.array([[scale, 0.0], [0.0, scale]])
    offset = np.array([c_in - scale * c_out] * 2)
    out = np.stack([ndimage.affine_transform(f[..., c], matrix, offset=offset,
                                             output_shape=(size, size), order=1,
                                             mode="nearest") for c in range(3)], axis=-1)
    return _to_uint8(out)


def _zoom(img, factor):
    size = img.shape[0]
    keep = int(round(size / factor))
    start = (size - keep) // 2
    crop = img[start:start + keep, start:start + keep]
    return _zoom_to(crop, size)


def _affine(img, rotation, translate_x, translate_y, scale, shear):
    size = img.shape[0]
    theta = np.deg2rad(rotation)
    psi = np.deg2rad(shear)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    shear_m = np.array([[1.0, np.tan(psi)], [0.0, 1.0]])
    linear = rot @ shear_m * scale
    centre = np.array([(size - 1) / 2.0] * 2)
    shift = np.array([translate_y * size, translate_x * size])
    inv = np.linalg.inv(linear)
    offset = centre - inv @ (centre + shift)
    f = _to_float(img)
    out = np.stack([ndimage.affine_transform(f[..., c], inv, offset=offset, order=1,
                                             mode="reflect") for c in range(3)], axis=-1)
    return _to_uint8(out)


def _homography(src, dst):
    rows = []
    rhs = []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        rhs.append(u)
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        rhs.append(v)
    h = np.linalg.solve(np.array(rows, dtype=np.float64), np.array(rhs, dtype=np.float64))
    return np.append(h, 1.0).reshape(3, 3)


def _warp_perspective(img, corner_shift):
    size = img.shape[0]
    last = size - 1.0
    out_corners = [(0.0, 0.0), (last, 0.0), (last, last), (0.0, last)]
    inward = [(1, 1), (-1, 1), (-1, -1), (1, -1)]
    in_corners = [(cx + sx * dx * last, cy + sy * dy * last)
                  for (cx, cy), (sx, sy), (dx, dy)
                  in zip(out_corners, inward, corner_shift)]
    hom = _homography(out_corners, in_corners)   # output -> input mapping
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    denom = hom[2, 0] * xs + hom[2, 1] * ys + hom[2, 2]
    map_x = (hom[0, 0] * xs + hom[0, 1] * ys + hom[0, 2]) / denom
    map_y = (hom[1, 0] * xs + hom[1, 1] * ys + hom[1, 2]) / denom
    f = _to_float(img)
    out = np.stack([ndimage.map_coordinates(f[..., c], [map_y, map_x], order=1,
                                            mode="reflect") for c in range(3)], axis=-1)
    return _to_uint8(out)


def _jigsaw(img, rng_seed, grid=4):
    size = img.shape[0]
    if size % grid != 0:
        raise DimensionMismatch(f"jigsaw needs the patch size divisible by {grid}")
    cell = size // grid
    gen = rngmod.substream(rng_seed, "jigsaw")
    perm = gen.permutation(grid * grid)
    out = np.empty_like(img)
    for dest, src in enumerate(perm):
        dr, dc = divmod(dest, grid)
        sr, sc = divmod(int(src), grid)
        out[dr * cell:(dr + 1) * cell, dc * cell:(dc + 1) * cell] = \
            img[sr * cell:(sr + 1) * cell, sc * cell:(sc + 1) * cell]
    return out


def _cutout(img, frac_x, frac_y, frac_w, frac_h):
    size = img.shape[0]
    x0 = int(round(frac_x * size))
    y0 = int(round(frac_y * size))
    w = max(1, int(round(frac_w * size)))
    h = max(1, int(round(frac_h * size)))
    out = img.copy()
    out[y0:min(y0 + h, size), x0:min(x0 + w, size)] = 0
    return out


_AUGMIX_POOL = ("rotate90", "rotate180", "rotate270", "flip_h", "flip_v",
                "brightness_low", "brightness_high", "contrast_low", "contrast_high",
                "saturation_low", "saturation_high", "gamma_0_5", "gamma_2_0", "sharpen")


def _augmix(img, rng_seed, width=3, max_depth=3):
    """Width-3 chain mixing over the basic ops above (an approximation of the
    published recipe, which composes its own op set)."""
    gen = rngmod.substream(rng_seed, "augmix")
    weights = gen.dirichlet(np.ones(width))
    m = float(gen.beta(1.0, 1.0))
    f = _to_float(img)
    mixed = np.zeros_like(f)
    for chain in range(width):
        depth = int(gen.integers(1, max_depth + 1))
        current = img
        for _ in range(depth):
            op = _AUGMIX_POOL[int(gen.integers(0, len(_AUGMIX_POOL)))]
            current = _apply_kind(current, AugmentationSpec(op, rng_seed=rng_seed))
        mixed += weights[chain] * _to_float(current)
    return _to_uint8((1.0 - m) * f + m * mixed)


def _macenko_patch(img):
    # background-only patches carry no stain signal; pass them through
    try:
        return macenko_normalise(img, macenko_fit(img), DEFAULT_REFERENCE)
    except (InsufficientTissue, DegenerateCovariance):
        return img.copy()


def _apply_kind(img: np.ndarray, spec: AugmentationSpec) -> np.ndarray:
    kind, p = spec.kind, spec.params
    if kind == "macenko_patch":
        return _macenko_patch(img)
    if kind == "rotate90":
        return np.rot90(img, 1).copy()
    if kind == "rotate180":
        return np.rot90(img, 2).copy()
    if kind == "rotate270":
        return np.rot90(img, 3).copy()
    if kind == "random_rotation":
        return _rotate(img, p["angle"], p.get("centre_crop", False))
    if kind == "flip_h":
        return np.fliplr(img).copy()
    if kind == "flip_v":
        return np.flipud(img).copy()
    if kind == "zoom_1_5":
        return _zoom(img, 1.5)
    if kind == "zoom_1_75":
        return _zoom(img, 1.75)
    if kind == "zoom_2":
        return _zoom(img, 2.0)
    if kind == "affine":
        return _affine(img, p["rotation"], p["translate_x"], p["translate_y"],
                       p["scale"], p["shear"])
    if kind == "warp_perspective":
        return _warp_perspective(img, p["corner_shift"])
    if kind == "jigsaw":
        return _jigsaw(img, spec.rng_seed)
    if kind == "cutout":
        return _cutout(img, p["frac_x"], p["frac_y"], p["frac_w"], p["frac_h"])
    if kind == "augmix":
        return _augmix(img, spec.rng_seed)
    if kind == "brightness_low":
        return _brightness(img, 0.7)
    if kind == "brightness_high":
        return _brightness(img, 1.5)
    if kind == "contrast_low":
        return _contrast(img, 0.7)
    if kind == "contrast_high":
        return _contrast(img, 1.5)
    if kind == "saturation_low":
        return _saturation(img, 0.7)
    if kind == "saturation_high":
        return _saturation(img, 1.5)
    if kind == "colour_jitter":
        out = _brightness(img, p["brightness"])
        out = _contrast(out, p["contrast"])
        out = _saturation(out, p["saturation"])
        return _hue_shift(out, p["hue"])
    if kind == "gamma_0_5":
        return _gamma(img, 0.5)
    if kind == "gamma_2_0":
        return _gamma(img, 2.0)
    if kind == "sharpen":
        return _sharpen(img)
    if kind == "gaussian_blur":
        return _gaussian_blur(img)
    if kind == "median_blur":
        return _median_blur(img)
    raise DimensionMismatch(f"unknown augmentation kind {kind!r}")


def apply_augmentation(patch: Patch, spec: AugmentationSpec) -> Patch:
    """Transform one patch; same spec, same patch -> same bytes."""
    out = _apply_kind(patch.pixels, spec)
    if out.shape != patch.pixels.shape:
        raise DimensionMismatch(f"{spec.kind} changed the patch shape")
    return Patch(pixels=out, slide_id=patch.slide_id, grid_pos=patch.grid_pos)
