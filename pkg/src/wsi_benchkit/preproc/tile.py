"""Non-overlapping patch tiling of raster slides."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import SlideTooSmall


@dataclass(frozen=True)
class Patch:
    pixels: np.ndarray  # (P, P, 3) uint8
    slide_id: str
    grid_pos: tuple[int, int]  # (row, col)


def tile(slide: np.ndarray, patch_size: int, slide_id: str = "slide") -> list[Patch]:
    """Row-major grid of patch_size squares; right/bottom remainders dropped."""
    slide = np.asarray(slide)
    if slide.ndim != 3 or slide.shape[2] != 3 or slide.dtype != np.uint8:
        raise SlideTooSmall(f"slide must be (H, W, 3) uint8, got {slide.shape} {slide.dtype}")
    height, width = slide.shape[:2]
    if height < patch_size or width < patch_size:
        raise SlideTooSmall(f"slide {width}x{height} smaller than patch size {patch_size}")
    patches = []
    for row in range(height // patch_size):
        for col in range(width // patch_size):
            pixels = slide[row * patch_size:(row + 1) * patch_size,
                           col * patch_size:(col + 1) * patch_size]
            patches.append(Patch(pixels=np.ascontiguousarray(pixels),
                                 slide_id=slide_id, grid_pos=(row, col)))
    return patches
