"""The multiple-instance unit: one patient's patch feature vectors + label."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionMismatch


@dataclass(frozen=True)
class Bag:
    patient_id: str
    patches: np.ndarray  # (n, d) float64
    label: int


def make_bag(patient_id: str, patches, label: int) -> Bag:
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 2 or patches.shape[0] < 1:
        raise DimensionMismatch(f"bag {patient_id!r}: patches must be a non-empty (n, d) matrix")
    if not np.all(np.isfinite(patches)):
        raise DimensionMismatch(f"bag {patient_id!r}: non-finite feature values")
    if label < 0:
        raise DimensionMismatch(f"bag {patient_id!r}: label must be a class index >= 0")
    patches.setflags(write=False)
    return Bag(patient_id=patient_id, patches=patches, label=int(label))
