"""Stain normalisation by optical-density eigendecomposition.

The stain basis of an H&E image is estimated from the eigenstructure of its
optical densities: tissue pixels are projected onto the top-2 eigenplane of
the OD covariance, the 1st/99th-percentile angles in that plane give the two
extreme stain directions, and per-pixel stain concentrations follow by
non-negative least squares.  Normalisation rescales concentrations to a
reference profile's 99th-percentile concentrations and recomposes through
the reference basis.

Conventions frozen here (config-level constants): OD = -log10((I+1)/256),
tissue = all three channel ODs >= 0.15, angle percentiles 1/99, haematoxylin
is the extreme vector with the larger red-channel OD.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateCovariance, InsufficientTissue

OD_THRESHOLD = 0.15
ANGLE_PERCENTILES = (1.0, 99.0)
MIN_TISSUE_PIXELS = 100
RANK_REL_TOL = 1e-3


@dataclass(frozen=True)
class StainProfile:
    stain_matrix: np.ndarray       # (3, 2), unit-norm columns, H then E
    max_concentrations: np.ndarray  # (2,), 99th-percentile concentration per stain

    def __post_init__(self):
        m = np.asarray(self.stain_matrix, dtype=np.float64)
        c = np.asarray(self.max_concentrations, dtype=np.float64)
        if m.shape != (3, 2) or c.shape != (2,):
            raise DegenerateCovariance("stain profile has wrong shape")
        if np.any(m < -1e-12):
            raise DegenerateCovariance("stain vectors must be non-negative")
        norms = np.linalg.norm(m, axis=0)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise DegenerateCovariance("stain vectors must be unit norm")
        object.__setattr__(self, "stain_matrix", m)
        object.__setattr__(self, "max_concentrations", c)
        m.setflags(write=False)
        c.setflags(write=False)


# the customary H&E reference basis and concentration scale
DEFAULT_REFERENCE = StainProfile(
    stain_matrix=np.array([[0.5626, 0.2159],
                           [0.7201, 0.8012],
                           [0.4062, 0.5581]]) / np.linalg.norm(
        [[0.5626, 0.2159], [0.7201, 0.8012], [0.4062, 0.5581]], axis=0),
    max_concentrations=np.array([1.9705, 1.0308]),
)


def rgb_to_od(pixels: np.ndarray) -> np.ndarray:
    return -np.log10((pixels.astype(np.float64) + 1.0) / 256.0)


def od_to_rgb(od: np.ndarray) -> np.ndarray:
    intensity = 256.0 * np.power(10.0, -od) - 1.0
    return np.clip(np.rint(intensity), 0, 255).astype(np.uint8)


def _nnls_2col(basis: np.ndarray, od: np.ndarray) -> np.ndarray:
    """Exact non-negative least squares for a 2-column basis, vectorised.

    The quadrant-constrained optimum is either the unconstrained solution or
    the best clamped single-stain edge, so all pixels are solved in closed
    form at once.
    """
    gram = basis.T @ basis                    # (2, 2)
    proj = od @ basis                         # (N, 2)
    det = gram[0, 0] * gram[1, 1] - gram[0, 1] ** 2
    if det <= 0:
        raise DegenerateCovariance("stain vectors are collinear")
    free = np.empty_like(proj)
    free[:, 0] = (gram[1, 1] * proj[:, 0] - gram[0, 1] * proj[:, 1]) / det
    free[:, 1] = (gram[0, 0] * proj[:, 1] - gram[0, 1] * proj[:, 0]) / det

    edge0 = np.maximum(proj[:, 0] / gram[0, 0], 0.0)   # stain 1 only
    edge1 = np.maximum(proj[:, 1] / gram[1, 1], 0.0)   # stain 2 only
    # objective up to the constant ||od||^2: c.G.c - 2 b.c
    f0 = edge0 * edge0 * gram[0, 0] - 2.0 * proj[:, 0] * edge0
    f1 = edge1 * edge1 * gram[1, 1] - 2.0 * proj[:, 1] * edge1

    out = free.copy()
    clamped = (free[:, 0] < 0.0) | (free[:, 1] < 0.0)
    use0 = clamped & (f0 <= f1)
    use1 = clamped & ~use0
    out[use0, 0] = edge0[use0]
    out[use0, 1] = 0.0
    out[use1, 0] = 0.0
    out[use1, 1] = edge1[use1]
    return out


def macenko_fit(pixels: np.ndarray, od_threshold: float = OD_THRESHOLD,
                angle_percentiles: tuple[float, float] = ANGLE_PERCENTILES) -> StainProfile:
    """Estimate the stain basis and concentration scale of one image."""
    od = rgb_to_od(pixels).reshape(-1, 3)
    tissue = od[np.all(od >= od_threshold, axis=1)]
    if tissue.shape[0] < MIN_TISSUE_PIXELS:
        raise InsufficientTissue(
            f"only {tissue.shape[0]} tissue pixels above OD {od_threshold} "
            f"(need {MIN_TISSUE_PIXELS})")

    cov = np.cov(tissue.T)
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals[1] <= RANK_REL_TOL * eigvals[2]:
        raise DegenerateCovariance(
            f"OD covariance is effectively rank 1 (eigenvalues {eigvals})")

    e1 = eigvecs[:, 2]
    e2 = eigvecs[:, 1]
    # canonical signs: dominant axis points along the data, second axis by its
    # largest component, so angles never straddle the atan2 branch cut
    if (tissue @ e1).mean() < 0:
        e1 = -e1
    if e2[np.argmax(np.abs(e2))] < 0:
        e2 = -e2

    proj1 = tissue @ e1
    proj2 = tissue @ e2
    phi = np.arctan2(proj2, proj1)
    lo, hi = np.percentile(phi, angle_percentiles)
    v_lo = np.cos(lo) * e1 + np.sin(lo) * e2
    v_hi = np.cos(hi) * e1 + np.sin(hi) * e2

    if v_lo[0] >= v_hi[0]:
        stains = np.column_stack([v_lo, v_hi])
    else:
        stains = np.column_stack([v_hi, v_lo])
    stains = np.maximum(stains, 0.0)   # OD components cannot be negative
    norms = np.linalg.norm(stains, axis=0)
    if np.any(norms < 1e-9):
        raise DegenerateCovariance("extreme stain direction collapsed to zero")
    stains = stains / norms

    concentrations = _nnls_2col(stains, od)
    max_c = np.percentile(concentrations, 99.0, axis=0)
    return StainProfile(stain_matrix=stains, max_concentrations=max_c)


def macenko_normalise(pixels: np.ndarray, source: StainProfile,
                      reference: StainProfile = DEFAULT_REFERENCE) -> np.ndarray:
    """Re-express an image in the reference stain basis and intensity scale."""
    shape = pixels.shape
    od = rgb_to_od(pixels).reshape(-1, 3)
    concentrations = _nnls_2col(source.stain_matrix, od)
    scale = np.where(source.max_concentrations > 0,
                     reference.max_concentrations / np.maximum(source.max_concentrations, 1e-12),
                     1.0)
    od_new = (concentrations * scale) @ reference.stain_matrix.T
    return od_to_rgb(od_new).reshape(shape)


def normalise_slide(slide: np.ndarray, reference: StainProfile = DEFAULT_REFERENCE,
                    mode: str = "slidewise", patch_size: int | None = None) -> np.ndarray:
    """Normalise a whole raster either with one slide-level fit or patch by
    patch (requires ``patch_size``); remainders outside the patch grid are
    normalised with the slide profile in patchwise mode."""
    if mode == "slidewise":
        return macenko_normalise(slide, macenko_fit(slide), reference)
    if mode != "patchwise":
        raise ValueError(f"unknown mode {mode!r}")
    if patch_size is None:
        raise ValueError("patchwise mode needs patch_size")
    out = macenko_normalise(slide, macenko_fit(slide), reference)
    for row in range(slide.shape[0] // patch_size):
        for col in range(slide.shape[1] // patch_size):
            sl = (slice(row * patch_size, (row + 1) * patch_size),
                  slice(col * patch_size, (col + 1) * patch_size))
            patch = slide[sl]
            out[sl] = macenko_normalise(patch, macenko_fit(patch), reference)
    return out
