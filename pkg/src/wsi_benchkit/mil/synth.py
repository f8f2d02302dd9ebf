"""Planted-signal synthetic task for sanity-checking the trainers.

Negative bags are pure background noise; positive bags hide a handful of
patches drawn from a shifted Gaussian.  Because only `k` of `n` patches
carry signal, mean pooling dilutes it by k/n while attention can single the
patches out, so the two aggregators separate by construction.
"""

from __future__ import annotations

import numpy as np

from .. import rng as rngmod
from .bags import Bag, make_bag

SIGNAL_DIMS = 4
SIGNAL_SHIFT = 2.0


def make_planted_bag(gen: np.random.Generator, patient_id: str, label: int,
                     d_x: int, n_min: int = 16, n_max: int = 64,
                     k_min: int = 1, k_max: int = 4) -> Bag:
    n = int(gen.integers(n_min, n_max + 1))
    patches = gen.normal(size=(n, d_x))
    if label == 1:
        k = int(gen.integers(k_min, min(k_max, n) + 1))
        patches[:k, :SIGNAL_DIMS] += SIGNAL_SHIFT
        gen.shuffle(patches, axis=0)
    return make_bag(patient_id, patches, label)


def make_planted_dataset(n_train: int, n_val: int, n_test: int, d_x: int,
                         rng_seed: int = 0, **bag_kwargs):
    """Balanced train/val/test splits of planted-signal bags."""
    splits = []
    for split_name, count in (("train", n_train), ("val", n_val), ("test", n_test)):
        gen = rngmod.substream(rng_seed, "planted", split_name)
        bags = [make_planted_bag(gen, f"{split_name}{i:04d}", i % 2, d_x, **bag_kwargs)
                for i in range(count)]
        splits.append(bags)
    return tuple(splits)
