"""Measures how stain-normalisation cost scales with slide size.

Slidewise mode runs one fit over all pixels; patchwise mode runs one fit per
patch.  The eigen-decomposition itself is on a fixed 3x3 covariance either
way, so both modes are expected to scale linearly in pixel count, with
patchwise carrying a per-patch overhead; this script reports the measured
wall-clock numbers rather than asserting any asymptotic exponent.

Usage: python3 scripts/macenko_scaling.py
"""

import time

import numpy as np

from wsi_benchkit.preproc.macenko import normalise_slide
from wsi_benchkit.preproc.synthimg import synthetic_stain_image

PATCH = 32


def measure(mode, grid):
    gen = np.random.default_rng(grid)
    slide = synthetic_stain_image(gen, grid * PATCH, grid * PATCH)
    start = time.perf_counter()
    normalise_slide(slide, mode=mode, patch_size=PATCH)
    return time.perf_counter() - start


def main():
    print(f"{'grid':>6} {'patches':>8} {'pixels':>10} {'slidewise':>10} {'patchwise':>10}")
    base = {}
    for grid in (2, 4, 8, 16):
        n_patches = grid * grid
        pixels = n_patches * PATCH * PATCH
        t_slide = measure("slidewise", grid)
        t_patch = measure("patchwise", grid)
        base.setdefault("slide", t_slide)
        base.setdefault("patch", t_patch)
        print(f"{grid:>6} {n_patches:>8} {pixels:>10} {t_slide:>9.4f}s {t_patch:>9.4f}s "
              f"(x{t_slide / base['slide']:.1f} / x{t_patch / base['patch']:.1f})")
    print("\npixel counts grew 4x per row; near-4x time ratios indicate linear "
          "scaling for both modes on this implementation.")


if __name__ == "__main__":
    main()
