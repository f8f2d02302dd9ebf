"""Stand-in patch embedder: a seeded random projection of downsampled pixels.

Plays the role of a frozen feature-extraction backbone at desk scale: cheap,
pure, and deterministic.  Different "extractors" differ by projection seed
and by how strongly a simple colour statistic (mean red minus green) is
injected into the features, which makes extractor rankings on colour-coded
synthetic tasks non-trivial.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import rng as rngmod

DOWNSAMPLE = 8


@dataclass(frozen=True)
class RandomProjectionEmbedder:
    name: str
    embed_seed: int
    d_x: int
    signal_gain: float = 0.0

    def _weights(self, in_dim):
        gen = rngmod.substream(self.embed_seed, "embed_proj")
        w = gen.normal(size=(self.d_x, in_dim)) / np.sqrt(in_dim)
        b = gen.normal(size=self.d_x) * 0.1
        u = gen.normal(size=self.d_x)
        u /= np.linalg.norm(u)
        return w, b, u

    def __call__(self, pixels: np.ndarray) -> np.ndarray:
        """Embed one (P, P, 3) uint8 patch into float32, shape (d_x,)."""
        size = pixels.shape[0]
        block = max(1, size // DOWNSAMPLE)
        usable = (size // block) * block
        small = pixels[:usable, :usable].astype(np.float64) / 255.0
        small = small.reshape(usable // block, block, usable // block, block, 3).mean(axis=(1, 3))
        flat = small.reshape(-1)
        w, b, u = self._weights(flat.size)
        features = np.maximum(w @ flat + b, 0.0)
        signal = float(pixels[..., 0].mean() - pixels[..., 1].mean()) / 255.0
        features = features + self.signal_gain * signal * u
        return features.astype(np.float32)
