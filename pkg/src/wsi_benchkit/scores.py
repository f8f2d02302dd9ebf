"""Data model and CSV ingestion for experiment results.

Two flat-file formats are understood:

* scores CSV:      ``task,model,extractor,seed,augmentation,magnification,auroc``
* predictions CSV: ``task,model,extractor,seed,augmentation,magnification,sample_id,score,label``

Ingestion is strict: grids must be complete (one AUROC per extractor/seed
cell), values must be in range, and prediction runs must contain both
classes.  Everything is immutable after construction and ingestion is
order-independent (rows may be permuted freely).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import (
    DuplicateRow,
    MalformedRow,
    MissingCell,
    SingleClassRun,
    ValueOutOfRange,
)

MODELS = frozenset({"mean_pool", "attmil", "transformer"})
AUGMENTATIONS = frozenset({"none", "macenko_slide", "macenko_patch", "rotate_flip", "all"})
MAGNIFICATIONS = frozenset({"low", "high"})

SCORES_HEADER = ["task", "model", "extractor", "seed", "augmentation", "magnification", "auroc"]
PREDICTIONS_HEADER = SCORES_HEADER[:-1] + ["sample_id", "score", "label"]


@dataclass(frozen=True)
class RunKey:
    task: str
    model: str
    extractor: str
    seed: int
    augmentation: str
    magnification: str

    def validate(self) -> "RunKey":
        if self.model not in MODELS:
            raise MalformedRow(f"unknown model {self.model!r}")
        if self.augmentation not in AUGMENTATIONS:
            raise MalformedRow(f"unknown augmentation {self.augmentation!r}")
        if self.magnification not in MAGNIFICATIONS:
            raise MalformedRow(f"unknown magnification {self.magnification!r}")
        if self.seed < 1:
            raise ValueOutOfRange(f"seed {self.seed} must be >= 1")
        return self


@dataclass(frozen=True)
class ScoreGrid:
    """Complete F x S matrix of test AUROCs for one experimental group."""

    task: str
    model: str
    augmentation: str
    magnification: str
    extractors: tuple[str, ...]
    seeds: tuple[int, ...]
    auroc: np.ndarray  # shape (F, S), float64

    def __post_init__(self):
        object.__setattr__(self, "auroc", np.asarray(self.auroc, dtype=np.float64))
        if self.auroc.shape != (len(self.extractors), len(self.seeds)):
            raise MalformedRow("auroc matrix shape does not match extractor/seed lists")
        if len(self.extractors) < 1 or len(self.seeds) < 1:
            raise MalformedRow("grid needs at least one extractor and one seed")
        if np.any(self.auroc < 0.0) or np.any(self.auroc > 1.0):
            raise ValueOutOfRange("AUROC values must be in [0, 1]")
        self.auroc.setflags(write=False)

    @property
    def n_extractors(self) -> int:
        return len(self.extractors)

    @property
    def n_seeds(self) -> int:
        return len(self.seeds)

    def group_key(self):
        return (self.task, self.model, self.augmentation, self.magnification)


@dataclass(frozen=True)
class PredictionSet:
    """Per-sample (score, label) pairs of one trained model on one test set.

    Samples are held in canonical order (sorted by ``sample_id``) so that
    index-based resampling is reproducible.
    """

    key: RunKey
    samples: tuple[tuple[str, float, int], ...]  # (sample_id, score, label)

    @property
    def sample_ids(self) -> tuple[str, ...]:
        return tuple(s[0] for s in self.samples)

    @property
    def scores(self) -> np.ndarray:
        return np.array([s[1] for s in self.samples], dtype=np.float64)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s[2] for s in self.samples], dtype=np.int64)


def make_prediction_set(key: RunKey, samples: Iterable[tuple[str, float, int]]) -> PredictionSet:
    """Build a validated PredictionSet (unique ids, both classes present)."""
    ordered = tuple(sorted(samples, key=lambda s: s[0]))
    seen = set()
    for sid, _, label in ordered:
        if sid in seen:
            raise MalformedRow(f"duplicate sample_id {sid!r} in run {key}")
        seen.add(sid)
        if label not in (0, 1):
            raise MalformedRow(f"label must be 0 or 1, got {label!r}")
    labels = {s[2] for s in ordered}
    if labels != {0, 1}:
        raise SingleClassRun(f"run {key} contains a single class: {sorted(labels)}")
    return PredictionSet(key=key, samples=ordered)


def _read_rows(path, header):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise MalformedRow(f"{path}: empty file") from None
        if [h.strip() for h in got] != header:
            raise MalformedRow(f"{path}: expected header {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise MalformedRow(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            yield lineno, row


def _parse_key(row) -> RunKey:
    task, model, extractor, seed, augmentation, magnification = row[:6]
    try:
        seed_i = int(seed)
    except ValueError:
        raise MalformedRow(f"seed {seed!r} is not an integer") from None
    return RunKey(task, model, extractor, seed_i, augmentation, magnification).validate()


def ingest_scores(path, expected_s: int) -> list[ScoreGrid]:
    """Read a scores CSV into complete ScoreGrids.

    One grid per (task, model, augmentation, magnification) group, rows
    sorted by extractor name, columns by seed 1..expected_s.  Raises
    MissingCell / DuplicateRow / ValueOutOfRange on incomplete or invalid
    input.
    """
    cells: dict = {}
    for lineno, row in _read_rows(path, SCORES_HEADER):
        key = _parse_key(row)
        if key.seed > expected_s:
            raise ValueOutOfRange(f"{path}:{lineno}: seed {key.seed} exceeds declared S={expected_s}")
        try:
            value = float(row[6])
        except ValueError:
            raise MalformedRow(f"{path}:{lineno}: auroc {row[6]!r} is not a number") from None
        if not 0.0 <= value <= 1.0:
            raise ValueOutOfRange(f"{path}:{lineno}: auroc {value} outside [0, 1]")
        group = (key.task, key.model, key.augmentation, key.magnification)
        cell = (key.extractor, key.seed)
        grid = cells.setdefault(group, {})
        if cell in grid:
            raise DuplicateRow(f"{path}:{lineno}: duplicate cell {cell} in group {group}")
        grid[cell] = value

    seeds = tuple(range(1, expected_s + 1))
    grids = []
    for group in sorted(cells):
        grid = cells[group]
        extractors = tuple(sorted({c[0] for c in grid}))
        matrix = np.empty((len(extractors), expected_s), dtype=np.float64)
        for i, ext in enumerate(extractors):
            for j, seed in enumerate(seeds):
                if (ext, seed) not in grid:
                    raise MissingCell(f"group {group}: missing cell (extractor={ext!r}, seed={seed})")
                matrix[i, j] = grid[(ext, seed)]
        task, model, augmentation, magnification = group
        grids.append(ScoreGrid(task, model, augmentation, magnification, extractors, seeds, matrix))
    return grids


def emit_scores(grids: Iterable[ScoreGrid], path) -> None:
    """Write grids back to the scores CSV schema at full precision."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORES_HEADER)
        for grid in grids:
            for i, ext in enumerate(grid.extractors):
                for j, seed in enumerate(grid.seeds):
                    writer.writerow([
                        grid.task, grid.model, ext, seed,
                        grid.augmentation, grid.magnification,
                        repr(float(grid.auroc[i, j])),
                    ])


def ingest_predictions(path) -> list[PredictionSet]:
    """Read a predictions CSV, grouped by RunKey, one PredictionSet per run."""
    runs: dict[RunKey, list] = {}
    for lineno, row in _read_rows(path, PREDICTIONS_HEADER):
        key = _parse_key(row)
        sample_id = row[6]
        try:
            score = float(row[7])
            label = int(row[8])
        except ValueError:
            raise MalformedRow(f"{path}:{lineno}: bad score/label {row[7]!r},{row[8]!r}") from None
        runs.setdefault(key, []).append((sample_id, score, label))
    return [make_prediction_set(key, rows) for key, rows in sorted(runs.items(), key=lambda kv: repr(kv[0]))]
