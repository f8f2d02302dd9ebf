"""Paired-bootstrap estimation of AUROC differences between two conditions.

Each (task, seed) pair holds two prediction sets over the identical test
samples: one per condition.  A bootstrap draws sample indices with
replacement once and deploys *both* models on that same resample, so the
difference isolates the condition and not the resampling noise.  Resamples
that lose label diversity are redrawn (bounded retries).  RNG streams are
split per (task, seed, replicate) from the caller's seed, so parallel and
serial execution produce identical output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .auroc import auroc_scores
from .errors import DegenerateResample, PairMismatch
from .scores import PredictionSet

MAX_REDRAWS = 1000


@dataclass(frozen=True)
class PairedRuns:
    condition_a: str
    condition_b: str
    pairs: tuple[tuple[str, int, PredictionSet, PredictionSet], ...]
    # (task, seed, preds_a, preds_b)


@dataclass(frozen=True)
class BootstrapDistribution:
    differences: np.ndarray
    summary: dict[str, float]


def make_paired_runs(condition_a, condition_b, pairs) -> PairedRuns:
    """Validate that both prediction sets of every pair share the test set and
    that the pairs cover the full tasks x seeds product."""
    checked = []
    for task, seed, pa, pb in pairs:
        if pa.sample_ids != pb.sample_ids:
            raise PairMismatch(f"pair ({task}, {seed}): sample_id sets differ")
        if not np.array_equal(pa.labels, pb.labels):
            raise PairMismatch(f"pair ({task}, {seed}): labels differ for shared samples")
        checked.append((task, seed, pa, pb))
    tasks = {p[0] for p in checked}
    seeds = {p[1] for p in checked}
    keys = {(p[0], p[1]) for p in checked}
    if len(keys) != len(checked):
        raise PairMismatch("duplicate (task, seed) pair")
    if len(checked) != len(tasks) * len(seeds):
        missing = sorted({(t, s) for t in tasks for s in seeds} - keys)
        raise PairMismatch(f"incomplete tasks x seeds grid; missing {missing[:5]}")
    checked.sort(key=lambda p: (p[0], p[1]))
    return PairedRuns(condition_a, condition_b, tuple(checked))


def resample_indices(gen: np.random.Generator, labels: np.ndarray) -> np.ndarray:
    """Draw a with-replacement resample that keeps both classes, redrawing
    degenerate draws up to MAX_REDRAWS times."""
    n = labels.size
    for _ in range(MAX_REDRAWS):
        idx = gen.integers(0, n, size=n)
        picked = labels[idx]
        if picked.min() != picked.max():
            return idx
    raise DegenerateResample(f"no label-diverse resample found in {MAX_REDRAWS} draws")


def pair_diff_on_indices(preds_a: PredictionSet, preds_b: PredictionSet,
                         indices) -> float:
    """AUROC(a) - AUROC(b) evaluated on one shared index multiset."""
    idx = np.asarray(indices, dtype=np.int64)
    labels = preds_a.labels[idx]
    a = auroc_scores(preds_a.scores[idx], labels).value
    b = auroc_scores(preds_b.scores[idx], labels).value
    return a - b


def bootstrap_diff(runs: PairedRuns, b: int = 25, rng_seed: int = 0) -> BootstrapDistribution:
    """Bootstrap the condition difference over every (task, seed) pair.

    Produces ``len(pairs) * b`` differences in deterministic order (pairs
    sorted by (task, seed), replicates ascending).
    """
    diffs = np.empty(len(runs.pairs) * b, dtype=np.float64)
    pos = 0
    for task, seed, pa, pb in runs.pairs:
        labels = pa.labels
        for rep in range(b):
            gen = rngmod.substream(rng_seed, "bootstrap", task, seed, rep)
            idx = resample_indices(gen, labels)
            diffs[pos] = pair_diff_on_indices(pa, pb, idx)
            pos += 1
    return BootstrapDistribution(differences=diffs, summary=summarize(diffs))


def summarize(values: np.ndarray) -> dict[str, float]:
    """Five-number summary plus mean; percentiles are linearly interpolated
    between order statistics (the numpy default)."""
    v = np.asarray(values, dtype=np.float64)
    return {
        "mean": float(v.mean()),
        "median": float(np.quantile(v, 0.5)),
        "q1": float(np.quantile(v, 0.25)),
        "q3": float(np.quantile(v, 0.75)),
        "p2_5": float(np.quantile(v, 0.025)),
        "p97_5": float(np.quantile(v, 0.975)),
    }


def summarize_boxplot(dist: BootstrapDistribution) -> dict:
    """Plot-data record for one boxplot: median, IQR box, 95% whiskers, mean."""
    s = dist.summary
    return {
        "median": s["median"],
        "box": [s["q1"], s["q3"]],
        "whiskers": [s["p2_5"], s["p97_5"]],
        "mean": s["mean"],
        "n": int(dist.differences.size),
    }
