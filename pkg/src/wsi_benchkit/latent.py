"""Embedding-displacement statistics.

How far does a transform move a patch in feature space?  For every id with
both an original and a transformed embedding we take the cosine distance
between the two.  Two sampled baselines put those distances on a scale:
distances between random same-class pairs, and between random cross-class
pairs, of untransformed embeddings.  The mean random-pair distance
("dispersion") additionally normalises displacements so differently spread
feature spaces can be compared.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .bootstrap import summarize
from .errors import InsufficientClasses, VariantMissing, ZeroVector

ORIGINAL = "original"
DEFAULT_PAIRS = 10_000


@dataclass
class EmbeddingTable:
    """(id, class, variant) -> vector store with an 'original' per id."""

    _vectors: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)
    _classes: dict[str, str] = field(default_factory=dict)
    d_x: int | None = None

    def add(self, entry_id: str, class_label: str, variant: str, vector) -> None:
        vector = np.asarray(vector, dtype=np.float64)
        if self.d_x is None:
            self.d_x = vector.size
        if vector.shape != (self.d_x,):
            raise ZeroVector(f"{entry_id}/{variant}: expected {self.d_x} dims, got {vector.shape}")
        if np.linalg.norm(vector) == 0.0:
            raise ZeroVector(f"{entry_id}/{variant}: zero-norm vector")
        if self._classes.setdefault(entry_id, class_label) != class_label:
            raise ZeroVector(f"{entry_id}: conflicting class labels")
        self._vectors[(entry_id, variant)] = vector

    def validate(self) -> "EmbeddingTable":
        for entry_id, variant in self._vectors:
            if variant != ORIGINAL and (entry_id, ORIGINAL) not in self._vectors:
                raise VariantMissing(f"{entry_id}: has variant {variant!r} but no original")
        return self

    def ids(self) -> list[str]:
        return sorted({i for i, v in self._vectors if v == ORIGINAL})

    def variants(self) -> list[str]:
        return sorted({v for _, v in self._vectors})

    def vector(self, entry_id: str, variant: str) -> np.ndarray:
        return self._vectors[(entry_id, variant)]

    def has(self, entry_id: str, variant: str) -> bool:
        return (entry_id, variant) in self._vectors

    def class_of(self, entry_id: str) -> str:
        return self._classes[entry_id]


def cosine_distance(u, v) -> float:
    """1 - cos(u, v), evaluated as half the squared distance of the unit
    vectors so identical inputs give exactly 0 and the range is [0, 2] by
    construction."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ZeroVector("cosine distance undefined for zero vectors")
    diff = u / nu - v / nv
    return float(0.5 * (diff @ diff))


@dataclass(frozen=True)
class DisplacementResult:
    variant: str
    ids: tuple[str, ...]
    distances: np.ndarray
    n_skipped: int  # ids lacking the variant


def displacement_stats(table: EmbeddingTable, variant: str) -> DisplacementResult:
    """Per-id distance from the original to the given variant."""
    if variant not in table.variants():
        raise VariantMissing(f"variant {variant!r} not present")
    ids, distances, skipped = [], [], 0
    for entry_id in table.ids():
        if not table.has(entry_id, variant):
            skipped += 1
            continue
        ids.append(entry_id)
        distances.append(cosine_distance(table.vector(entry_id, ORIGINAL),
                                         table.vector(entry_id, variant)))
    return DisplacementResult(variant=variant, ids=tuple(ids),
                              distances=np.array(distances), n_skipped=skipped)


def _pairs_within(gen, ids, n_pairs):
    out = []
    for _ in range(n_pairs):
        i, j = gen.choice(len(ids), size=2, replace=False)
        out.append((ids[i], ids[j]))
    return out


def class_pair_baselines(table: EmbeddingTable, n_pairs: int, rng_seed: int = 0):
    """Cosine distances of random same-class and cross-class original pairs.

    Pair members are distinct within a pair; ids may repeat across pairs.
    """
    by_class: dict[str, list[str]] = {}
    for entry_id in table.ids():
        by_class.setdefault(table.class_of(entry_id), []).append(entry_id)
    classes = sorted(by_class)
    if len(classes) < 2:
        raise InsufficientClasses("need at least two classes for baselines")
    rich = [c for c in classes if len(by_class[c]) >= 2]
    if not rich:
        raise InsufficientClasses("need a class with at least two ids")

    same_gen = rngmod.substream(rng_seed, "latent_same")
    same = []
    for _ in range(n_pairs):
        cls = rich[int(same_gen.integers(0, len(rich)))]
        a, b = _pairs_within(same_gen, by_class[cls], 1)[0]
        same.append(cosine_distance(table.vector(a, ORIGINAL), table.vector(b, ORIGINAL)))

    cross_gen = rngmod.substream(rng_seed, "latent_cross")
    cross = []
    for _ in range(n_pairs):
        ca, cb = cross_gen.choice(len(classes), size=2, replace=False)
        ids_a, ids_b = by_class[classes[ca]], by_class[classes[cb]]
        a = ids_a[int(cross_gen.integers(0, len(ids_a)))]
        b = ids_b[int(cross_gen.integers(0, len(ids_b)))]
        cross.append(cosine_distance(table.vector(a, ORIGINAL), table.vector(b, ORIGINAL)))
    return np.array(same), np.array(cross)


def dispersion(table: EmbeddingTable, n_pairs: int = DEFAULT_PAIRS, rng_seed: int = 0) -> float:
    """Mean distance between random original pairs (class-blind).

    When the population of distinct pairs is no larger than ``n_pairs`` the
    exact mean over all pairs is returned instead of a sampled estimate.
    """
    ids = table.ids()
    if len(ids) < 2:
        raise InsufficientClasses("need at least two ids for dispersion")
    total_pairs = len(ids) * (len(ids) - 1) // 2
    if total_pairs <= n_pairs:
        dists = [cosine_distance(table.vector(ids[i], ORIGINAL), table.vector(ids[j], ORIGINAL))
                 for i in range(len(ids)) for j in range(i + 1, len(ids))]
        return float(np.mean(dists))
    gen = rngmod.substream(rng_seed, "latent_dispersion")
    dists = [cosine_distance(table.vector(a, ORIGINAL), table.vector(b, ORIGINAL))
             for a, b in _pairs_within(gen, ids, n_pairs)]
    return float(np.mean(dists))


def displacement_summary(table: EmbeddingTable, variants: list[str] | None = None,
                         n_pairs: int = DEFAULT_PAIRS, rng_seed: int = 0) -> dict:
    """Full per-variant summary with baselines and dispersion-normalised
    medians; the JSON-ready record behind the reporting CLI."""
    variants = variants or [v for v in table.variants() if v != ORIGINAL]
    same, cross = class_pair_baselines(table, n_pairs, rng_seed)
    spread = dispersion(table, n_pairs, rng_seed)
    record = {
        "dispersion": spread,
        "baselines": {
            "same_class_random": summarize(same) if same.size else {},
            "cross_class_random": summarize(cross) if cross.size else {},
        },
        "variants": {},
    }
    for variant in variants:
        result = displacement_stats(table, variant)
        stats = summarize(result.distances) if result.distances.size else {}
        record["variants"][variant] = {
            "count": int(result.distances.size),
            "skipped": result.n_skipped,
            "stats": stats,
            "normalised_median": (stats["median"] / spread) if stats and spread > 0 else None,
        }
    return record
