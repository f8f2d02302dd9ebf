"""Deterministic named RNG substreams.

Every stochastic component derives its generator from a single master seed
plus a tuple of labels (strings or ints).  The rule is:

    entropy = (master_seed, sha256(label_0)[:8], sha256(label_1)[:8], ...)

fed into ``numpy.random.SeedSequence``.  String labels are hashed with
SHA-256 so the derivation is stable across platforms and Python processes
(unlike the builtin ``hash``).  The same ``(master, labels)`` pair therefore
always yields the same stream, whether substreams are drawn serially or in
parallel workers.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_entropy(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(master_seed: int, *labels) -> np.random.Generator:
    """Return a generator for the named substream of ``master_seed``."""
    entropy = [int(master_seed)] + [_label_entropy(lab) for lab in labels]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(master_seed: int, *labels) -> int:
    """Collapse a named substream into a single integer seed (for components
    that take a seed rather than a generator)."""
    entropy = [int(master_seed)] + [_label_entropy(lab) for lab in labels]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])
