"""Relative-performance scoring over seed ensembles.

Given a grid ``A`` of test AUROCs with one row per extractor (F rows) and one
column per training seed (S columns), a *trial* assigns one seed to every
row.  For row ``i`` the trial's score is

    D_i = max_j A[j, s_j] - A[i, s_i],

the gap to the best row under that assignment.  The reported statistic per
row is the mean and population standard deviation of ``D_i`` over all ``S**F``
trials; the best-performing row tends towards zero.

Two routes are provided:

* ``nds_enumerate`` walks every assignment in vectorised chunks and folds the
  scores into per-row Welford accumulators.  Faithful but exponential.
* ``nds_exact`` evaluates the same expectations in closed form through the
  distribution of the maximum.  The rows draw independently, so with
  ``X_j`` uniform over row ``j``, ``M_-i = max_{j != i} X_j`` has CDF

      P(M_-i <= v) = prod_{j != i} P(X_j <= v),

  supported on the multiset of distinct grid values (ties carry exact
  counts).  ``X_i`` and ``M_-i`` are independent and

      D_i = max(M_-i - X_i, 0),

  so both moments are plain sums over the joint (seed value, M_-i value)
  table:

      E[D_i]   = (1/S) sum_s sum_v p_-i(v) * max(v - A[i,s], 0)
      Var(D_i) = (1/S) sum_s sum_v p_-i(v) * (max(v - A[i,s], 0) - E[D_i])^2

  Every summand is non-negative, so near-constant gaps do not lose accuracy
  to cancellation (expanding the variance into raw moments does, which is
  why that route is not taken).  Runtime is O(F^2 S^2), which makes
  seed-ensemble sizes that are hopeless to enumerate finish in milliseconds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EnumerationTooLarge, ExtractorSetMismatch
from .scores import ScoreGrid
from .welford import WelfordAccumulator

DEFAULT_ENUMERATION_CAP = 10**8
DEFAULT_CHUNK = 1 << 16


@dataclass(frozen=True)
class NdsResult:
    grid_ref: tuple[str, str]  # (task, model)
    per_extractor: tuple[tuple[str, float, float], ...]  # (name, mean, std)
    trial_count: int

    @property
    def extractors(self) -> tuple[str, ...]:
        return tuple(e for e, _, _ in self.per_extractor)

    @property
    def means(self) -> np.ndarray:
        return np.array([m for _, m, _ in self.per_extractor])

    @property
    def stds(self) -> np.ndarray:
        return np.array([s for _, _, s in self.per_extractor])


@dataclass(frozen=True)
class TaskAverage:
    per_extractor: tuple[tuple[str, float, float, float], ...]
    # (name, mean_of_means, pooled_std, across_task_std)


def nds_enumerate(grid: ScoreGrid, cap: int = DEFAULT_ENUMERATION_CAP,
                  chunk: int = DEFAULT_CHUNK) -> NdsResult:
    """Enumerate all S**F seed assignments, streaming scores through Welford
    accumulators chunk by chunk (deterministic left-fold merge order)."""
    a = grid.auroc
    f, s = a.shape
    total = s ** f
    if total > cap:
        raise EnumerationTooLarge(
            f"S^F = {s}^{f} = {total} exceeds the enumeration cap {cap}; use nds_exact")

    accs = [WelfordAccumulator() for _ in range(f)]
    radix = s ** np.arange(f, dtype=np.int64)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        digits = (idx[None, :] // radix[:, None]) % s   # (F, chunk)
        values = a[np.arange(f)[:, None], digits]       # (F, chunk)
        best = values.max(axis=0)
        gaps = best[None, :] - values
        for i in range(f):
            accs[i].add_batch(gaps[i])

    per_extractor = tuple(
        (ext, accs[i].mean, accs[i].std()) for i, ext in enumerate(grid.extractors))
    return NdsResult(grid_ref=(grid.task, grid.model), per_extractor=per_extractor,
                     trial_count=total)


def nds_exact(grid: ScoreGrid) -> NdsResult:
    """Closed-form mean/std of the per-row gap, no enumeration."""
    a = grid.auroc
    f, s = a.shape
    values = np.unique(a)                      # sorted distinct grid values
    k = values.size

    # cdf[j, v] = P(X_j <= values[v]), rows pre-sorted for searchsorted
    sorted_rows = np.sort(a, axis=1)
    cdf = np.empty((f, k))
    for j in range(f):
        cdf[j] = np.searchsorted(sorted_rows[j], values, side="right") / s

    # prefix/suffix products over rows avoid dividing by zero-valued CDFs
    prefix = np.ones((f + 1, k))
    for j in range(f):
        prefix[j + 1] = prefix[j] * cdf[j]
    suffix = np.ones((f + 1, k))
    for j in range(f - 1, -1, -1):
        suffix[j] = suffix[j + 1] * cdf[j]

    per_extractor = []
    for i, ext in enumerate(grid.extractors):
        cdf_rest = prefix[i] * suffix[i + 1]          # CDF of max over rows != i
        pmf_rest = np.diff(cdf_rest, prepend=0.0)
        gaps = np.maximum(values[None, :] - a[i][:, None], 0.0)   # (S, K)
        mean_i = float((gaps @ pmf_rest).sum()) / s
        var_i = float((((gaps - mean_i) ** 2) @ pmf_rest).sum()) / s
        per_extractor.append((ext, mean_i, float(np.sqrt(max(var_i, 0.0)))))

    return NdsResult(grid_ref=(grid.task, grid.model),
                     per_extractor=tuple(per_extractor), trial_count=s ** f)


def task_average(results: list[NdsResult]) -> TaskAverage:
    """Average per-task results per extractor.

    ``pooled_std`` is the root of the mean per-task variance; the spread of
    the per-task means themselves is also reported (``across_task_std``,
    population convention) so either reading of a +/- column can be
    recovered.
    """
    if not results:
        raise ExtractorSetMismatch("no results to average")
    extractors = results[0].extractors
    for r in results[1:]:
        if r.extractors != extractors:
            raise ExtractorSetMismatch(
                f"extractor sets differ: {extractors} vs {r.extractors}")
    means = np.stack([r.means for r in results])  # (tasks, F)
    stds = np.stack([r.stds for r in results])
    mean_of_means = means.mean(axis=0)
    pooled = np.sqrt((stds ** 2).mean(axis=0))
    across = means.std(axis=0)
    return TaskAverage(per_extractor=tuple(
        (ext, float(mean_of_means[i]), float(pooled[i]), float(across[i]))
        for i, ext in enumerate(extractors)))


def cross_config_nds(grids: list[ScoreGrid]) -> NdsResult:
    """Score each (extractor, magnification) pairing as its own row.

    The grids must share task/model and seed count; rows are relabelled
    ``extractor@magnification`` and the merged grid is scored exactly.
    """
    if not grids:
        raise ExtractorSetMismatch("no grids to merge")
    base = grids[0]
    seeds = base.seeds
    rows = []
    labels = []
    for g in grids:
        if g.seeds != seeds:
            raise ExtractorSetMismatch("grids must share the seed set")
        if (g.task, g.model) != (base.task, base.model):
            raise ExtractorSetMismatch("grids must share task and model")
        for i, ext in enumerate(g.extractors):
            labels.append(f"{ext}@{g.magnification}")
            rows.append(g.auroc[i])
    if len(set(labels)) != len(labels):
        raise ExtractorSetMismatch(f"duplicate (extractor, magnification) rows: {labels}")
    merged = ScoreGrid(base.task, base.model, base.augmentation, base.magnification,
                       tuple(labels), seeds, np.stack(rows))
    return nds_exact(merged)


def downstream_model_nds(grids_by_model: list[ScoreGrid], extractor: str) -> NdsResult:
    """Vary the aggregation model for a fixed extractor (models become rows)."""
    if not grids_by_model:
        raise ExtractorSetMismatch("no grids given")
    task = grids_by_model[0].task
    rows = []
    labels = []
    for g in grids_by_model:
        if g.task != task:
            raise ExtractorSetMismatch("grids must share the task")
        if g.seeds != grids_by_model[0].seeds:
            raise ExtractorSetMismatch("grids must share the seed set")
        if extractor not in g.extractors:
            raise ExtractorSetMismatch(f"extractor {extractor!r} missing from grid for {g.model}")
        if g.model in labels:
            raise ExtractorSetMismatch(f"duplicate grid for model {g.model}")
        labels.append(g.model)
        rows.append(g.auroc[g.extractors.index(extractor)])
    merged = ScoreGrid(task, "per_model", grids_by_model[0].augmentation,
                       grids_by_model[0].magnification, tuple(labels),
                       grids_by_model[0].seeds, np.stack(rows))
    result = nds_exact(merged)
    return NdsResult(grid_ref=(task, extractor), per_extractor=result.per_extractor,
                     trial_count=result.trial_count)
