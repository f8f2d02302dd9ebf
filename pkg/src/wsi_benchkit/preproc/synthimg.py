"""Synthetic two-stain raster images with known ground truth.

Pixels are composed in optical-density space from two known unit stain
vectors with random positive concentrations, then quantised to uint8.  A
slice of the pixels is drawn at each pure stain so the extreme mixing
angles present in the data match the generating vectors exactly, which is
what makes the generator usable as a recovery oracle.
"""

from __future__ import annotations

import numpy as np

from .macenko import od_to_rgb

STAIN_A = np.array([0.65, 0.70, 0.29])
STAIN_B = np.array([0.25, 0.80, 0.55])


def default_stains() -> np.ndarray:
    stains = np.column_stack([STAIN_A, STAIN_B])
    return stains / np.linalg.norm(stains, axis=0)


def synthetic_stain_image(gen: np.random.Generator, height: int = 64, width: int = 64,
                          stains: np.ndarray | None = None,
                          concentration_range: tuple[float, float] = (0.7, 1.6),
                          pure_fraction: float = 0.1) -> np.ndarray:
    """Random tissue-like (H, W, 3) uint8 image spanning the full stain cone."""
    stains = default_stains() if stains is None else stains
    n = height * width
    total = gen.uniform(*concentration_range, size=n)
    ratio = gen.uniform(0.0, 1.0, size=n)
    n_pure = max(1, int(round(pure_fraction * n)))
    ratio[:n_pure] = 1.0
    ratio[n_pure:2 * n_pure] = 0.0
    gen.shuffle(ratio)  # spread the pure-stain pixels spatially
    concentrations = np.column_stack([total * ratio, total * (1.0 - ratio)])
    od = concentrations @ stains.T
    return od_to_rgb(od).reshape(height, width, 3)
