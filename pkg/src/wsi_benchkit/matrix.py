"""End-to-end synthetic benchmark matrix.

Generates raster slides for each task, tiles them, embeds every patch (and
every augmented variant a configured group can draw) into a feature cache,
then trains and evaluates one bag classifier per cell of the cartesian
product tasks x extractors x models x augmentation groups x seeds x
magnifications, writing the scores and per-sample predictions CSVs the
analysis commands consume.

Synthetic task: positive patients' slides contain a few patches with a red
colour shift.  Stand-in extractors expose that statistic more or less
strongly (their ``signal_gain``), so extractor rankings are non-trivial.
Every random choice derives from the master seed through named substreams;
reruns are byte-identical.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng as rngmod
from .auroc import auroc
from .errors import MalformedRow
from .mil.bags import Bag, make_bag
from .mil.model import ModelDims
from .mil.training import CosineAnneal, TrainConfig, evaluate, train
from .preproc.augment import AUGMENTATION_KINDS, sample_spec, apply_augmentation
from .preproc.cache import ORIGINAL_VARIANT, FeatureCacheReader, write_cache
from .preproc.embed import RandomProjectionEmbedder
from .preproc.macenko import DEFAULT_REFERENCE, macenko_fit, macenko_normalise
from .preproc.synthimg import synthetic_stain_image
from .preproc.tile import tile
from .scores import AUGMENTATIONS, MAGNIFICATIONS, MODELS, SCORES_HEADER, PREDICTIONS_HEADER
from .errors import InsufficientTissue, DegenerateCovariance

MACENKO_SLIDE_VARIANT = "macenko_slide"
ROTATE_FLIP_SET = ("flip_h", "flip_v", "rotate90", "rotate180", "rotate270")
ALL_SET = (ORIGINAL_VARIANT,) + AUGMENTATION_KINDS


@dataclass(frozen=True)
class EmbedderSpec:
    name: str
    embed_seed: int
    signal_gain: float = 0.0


@dataclass(frozen=True)
class ExperimentConfig:
    tasks: tuple[str, ...]
    extractors: tuple[EmbedderSpec, ...]
    models: tuple[str, ...]
    augment_groups: tuple[str, ...]
    seeds: tuple[int, ...]
    magnifications: tuple[str, ...] = ("low",)
    master_seed: int = 0
    # desk-scale dataset shape
    d_x: int = 24
    patch_size: int = 32
    slide_grid: int = 3          # low magnification; high doubles it
    n_train: int = 24
    n_val: int = 8
    n_test: int = 16
    signal_red_shift: int = 35   # uint8 red-channel shift on signal patches
    # training shape (few bags need a hotter schedule than the full-scale default)
    lr: float = 1e-2
    max_epochs: int = 20
    proj_dim: int = 32
    attn_hidden: int = 16
    n_heads: int = 2
    ff_dim: int = 32
    n_layers: int = 2

    def __post_init__(self):
        if not self.seeds:
            raise MalformedRow("config needs at least one seed")
        if not self.augment_groups:
            raise MalformedRow("config needs at least one augmentation group")
        for group in self.augment_groups:
            if group not in AUGMENTATIONS:
                raise MalformedRow(f"unknown augmentation group {group!r}")
        for model in self.models:
            if model not in MODELS:
                raise MalformedRow(f"unknown model {model!r}")
        for mag in self.magnifications:
            if mag not in MAGNIFICATIONS:
                raise MalformedRow(f"unknown magnification {mag!r}")

    @staticmethod
    def from_json(text: str) -> "ExperimentConfig":
        raw = json.loads(text)
        raw["tasks"] = tuple(raw["tasks"])
        raw["extractors"] = tuple(EmbedderSpec(**e) for e in raw["extractors"])
        raw["models"] = tuple(raw["models"])
        raw["augment_groups"] = tuple(raw["augment_groups"])
        raw["seeds"] = tuple(raw["seeds"])
        if "magnifications" in raw:
            raw["magnifications"] = tuple(raw["magnifications"])
        return ExperimentConfig(**raw)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def dims(self) -> ModelDims:
        return ModelDims(d_in=self.d_x, n_classes=2, proj_dim=self.proj_dim,
                         attn_hidden=self.attn_hidden, n_heads=self.n_heads,
                         ff_dim=self.ff_dim, n_layers=self.n_layers)


def draw_group_variants(group: str, n: int, gen: np.random.Generator) -> list[str]:
    """One variant name per patch for this epoch, per the group's rule."""
    if group == "none":
        return [ORIGINAL_VARIANT] * n
    if group == "macenko_patch":
        return ["macenko_patch"] * n
    if group == "macenko_slide":
        return [MACENKO_SLIDE_VARIANT] * n
    if group == "rotate_flip":
        return [ROTATE_FLIP_SET[i] for i in gen.integers(0, len(ROTATE_FLIP_SET), size=n)]
    if group == "all":
        return [ALL_SET[i] for i in gen.integers(0, len(ALL_SET), size=n)]
    raise MalformedRow(f"unknown augmentation group {group!r}")


def variants_needed(groups) -> list[str]:
    needed: set[str] = set()
    for group in groups:
        if group == "none":
            continue
        elif group == "macenko_patch":
            needed.add("macenko_patch")
        elif group == "macenko_slide":
            needed.add(MACENKO_SLIDE_VARIANT)
        elif group == "rotate_flip":
            needed.update(ROTATE_FLIP_SET)
        elif group == "all":
            needed.update(AUGMENTATION_KINDS)
    needed.discard(ORIGINAL_VARIANT)
    return sorted(needed)


def eval_variant_for_group(group: str) -> str:
    """Test (and validation) sets are never augmented, except that stain
    normalisation applies to them in the same way as to training data."""
    if group == "macenko_patch":
        return "macenko_patch"
    if group == "macenko_slide":
        return MACENKO_SLIDE_VARIANT
    return ORIGINAL_VARIANT


@dataclass(frozen=True)
class SlideRecord:
    slide_id: str
    split: str
    label: int
    grid_positions: tuple[tuple[int, int], ...]


def _make_slide(gen: np.random.Generator, grid: int, patch_size: int, label: int,
                red_shift: int) -> np.ndarray:
    size = grid * patch_size
    slide = synthetic_stain_image(gen, size, size)
    if label == 1:
        n_signal = int(gen.integers(1, max(2, grid)))
        cells = gen.choice(grid * grid, size=n_signal, replace=False)
        for cell in cells:
            r, c = divmod(int(cell), grid)
            block = slide[r * patch_size:(r + 1) * patch_size,
                          c * patch_size:(c + 1) * patch_size]
            red = block[..., 0].astype(np.int16) + red_shift
            block[..., 0] = np.clip(red, 0, 255).astype(np.uint8)
    return slide


def generate_task_data(config: ExperimentConfig, task: str, magnification: str):
    """All slides of one task at one magnification, split into train/val/test."""
    grid = config.slide_grid * (2 if magnification == "high" else 1)
    slides = {}
    records = []
    counts = (("train", config.n_train), ("val", config.n_val), ("test", config.n_test))
    for split, count in counts:
        gen = rngmod.substream(config.master_seed, "slides", task, magnification, split)
        for i in range(count):
            label = i % 2
            slide_id = f"{task}_{magnification}_{split}_{i:03d}"
            slides[slide_id] = _make_slide(gen, grid, config.patch_size, label,
                                           config.signal_red_shift)
            positions = tuple((r, c) for r in range(grid) for c in range(grid))
            records.append(SlideRecord(slide_id, split, label, positions))
    return slides, records


def _macenko_or_original(pixels):
    try:
        return macenko_normalise(pixels, macenko_fit(pixels), DEFAULT_REFERENCE)
    except (InsufficientTissue, DegenerateCovariance):
        return pixels


def build_task_cache(path, config: ExperimentConfig, slides: dict, records, embedder) -> None:
    """Embed original + every needed variant of every patch into one cache.

    Stochastic augmentation parameters are sampled once per (patch, kind)
    from the master seed and frozen into the cache, mirroring how a
    precomputed-feature pipeline snapshots its augmentations.
    """
    needed = variants_needed(config.augment_groups)
    variants = [ORIGINAL_VARIANT] + needed

    def rows():
        for record in records:
            slide = slides[record.slide_id]
            normalised = _macenko_or_original(slide) if MACENKO_SLIDE_VARIANT in needed else None
            for patch in tile(slide, config.patch_size, record.slide_id):
                row, col = patch.grid_pos
                yield record.slide_id, row, col, ORIGINAL_VARIANT, embedder(patch.pixels)
                for variant in needed:
                    if variant == MACENKO_SLIDE_VARIANT:
                        sl = normalised[row * config.patch_size:(row + 1) * config.patch_size,
                                        col * config.patch_size:(col + 1) * config.patch_size]
                        yield record.slide_id, row, col, variant, embedder(sl)
                    else:
                        seed = rngmod.derive_seed(config.master_seed, "augparam",
                                                  record.slide_id, row, col, variant)
                        spec = sample_spec(variant, rng_seed=seed)
                        augmented = apply_augmentation(patch, spec)
                        yield record.slide_id, row, col, variant, embedder(augmented.pixels)

    write_cache(path, config.d_x, variants, rows())


def bags_from_cache(reader: FeatureCacheReader, records, split: str, variant: str) -> list[Bag]:
    bags = []
    for record in records:
        if record.split != split:
            continue
        rows = [reader.get(record.slide_id, r, c, variant) for r, c in record.grid_positions]
        bags.append(make_bag(record.slide_id, np.stack(rows).astype(np.float64), record.label))
    return bags


def run_cell(config: ExperimentConfig, reader: FeatureCacheReader, records,
             task: str, magnification: str, extractor: EmbedderSpec, model: str,
             group: str, seed: int):
    """Train and evaluate one cell; returns (auroc_row, prediction_rows)."""
    eval_variant = eval_variant_for_group(group)
    train_bags = bags_from_cache(reader, records, "train", ORIGINAL_VARIANT)
    val_bags = bags_from_cache(reader, records, "val", eval_variant)
    test_bags = bags_from_cache(reader, records, "test", eval_variant)

    position_lookup = {r.slide_id: r.grid_positions for r in records}

    def provider(bag: Bag, epoch: int, gen: np.random.Generator) -> np.ndarray:
        positions = position_lookup[bag.patient_id]
        names = draw_group_variants(group, len(positions), gen)
        rows = [reader.get(bag.patient_id, r, c, name)
                for (r, c), name in zip(positions, names)]
        return np.stack(rows).astype(np.float64)

    cfg = TrainConfig(
        lr=config.lr,
        max_epochs=config.max_epochs,
        cosine_anneal=CosineAnneal(T_max=config.max_epochs),
        rng_seed=rngmod.derive_seed(config.master_seed, "train", task, magnification,
                                    extractor.name, model, group, seed),
    )
    params, _ = train(train_bags, val_bags, cfg, model, config.dims(),
                      patch_provider=None if group == "none" else provider)
    preds = evaluate(params, test_bags)
    value = auroc(preds).value
    score_row = (task, model, extractor.name, seed, group, magnification, repr(value))
    pred_rows = [(task, model, extractor.name, seed, group, magnification,
                  sid, repr(score), label) for sid, score, label in preds.samples]
    return score_row, pred_rows


def run_matrix(config: ExperimentConfig, out_dir, threads: int = 1,
               cache_dir=None) -> dict:
    """Run every cell of the configured product; writes scores.csv and
    predictions.csv under out_dir and returns a small run report."""
    import os
    os.makedirs(out_dir, exist_ok=True)
    cache_dir = cache_dir or out_dir

    cells = []
    for task in config.tasks:
        for magnification in config.magnifications:
            slides, records = generate_task_data(config, task, magnification)
            for extractor in config.extractors:
                embedder = RandomProjectionEmbedder(
                    name=extractor.name, embed_seed=extractor.embed_seed,
                    d_x=config.d_x, signal_gain=extractor.signal_gain)
                cache_path = os.path.join(
                    cache_dir, f"cache_{task}_{magnification}_{extractor.name}.wbk")
                build_task_cache(cache_path, config, slides, records, embedder)
                reader = FeatureCacheReader(cache_path)
                for model in config.models:
                    for group in config.augment_groups:
                        for seed in config.seeds:
                            cells.append((config, reader, records, task, magnification,
                                          extractor, model, group, seed))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda args: run_cell(*args), cells))
    else:
        results = [run_cell(*args) for args in cells]

    score_rows = sorted(r[0] for r in results)
    pred_rows = sorted(row for r in results for row in r[1])
    scores_path = os.path.join(out_dir, "scores.csv")
    with open(scores_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORES_HEADER)
        writer.writerows(score_rows)
    preds_path = os.path.join(out_dir, "predictions.csv")
    with open(preds_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTIONS_HEADER)
        writer.writerows(pred_rows)
    return {"cells": len(cells), "scores": scores_path, "predictions": preds_path}
