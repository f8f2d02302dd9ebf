"""Command-line entry point.

Subcommands: ``preproc tile|macenko|augment|cache``, ``mil train|eval``,
``nds``, ``bootstrap``, ``latent``, ``matrix run|report``.  Exit codes:
0 success, 2 validation error (bad inputs/arguments), 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .auroc import auroc
from .bootstrap import bootstrap_diff, make_paired_runs, summarize_boxplot
from .errors import EmptyReport, MalformedRow, ValidationError
from .latent import EmbeddingTable, displacement_stats, displacement_summary
from .matrix import ExperimentConfig, run_matrix
from .mil.bags import make_bag
from .mil.model import ModelDims
from .mil.training import TrainConfig, evaluate, split_train_val, train
from .nds import DEFAULT_ENUMERATION_CAP, cross_config_nds, nds_enumerate, nds_exact, task_average
from .preproc.augment import AUGMENTATION_KINDS, sample_spec, apply_augmentation
from .preproc.cache import ORIGINAL_VARIANT, FeatureCacheReader, build_feature_cache
from .preproc.embed import RandomProjectionEmbedder
from .preproc.macenko import normalise_slide
from .preproc.tile import tile
from .report import render_nds_table, write_nds_csv
from .scores import (
    PREDICTIONS_HEADER,
    PredictionSet,
    ingest_predictions,
    ingest_scores,
)


def load_image(path) -> np.ndarray:
    from PIL import Image
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def save_image(path, pixels: np.ndarray) -> None:
    from PIL import Image
    Image.fromarray(pixels, mode="RGB").save(path)


def read_labels(path) -> dict[str, int]:
    labels = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != ["slide_id", "label"]:
            raise MalformedRow(f"{path}: expected header slide_id,label")
        for row in reader:
            if not row:
                continue
            labels[row[0]] = int(row[1])
    return labels


def _bags_from_cache_cli(reader: FeatureCacheReader, labels: dict[str, int], variant: str):
    bags = []
    for slide_id, label in sorted(labels.items()):
        positions = reader.positions(slide_id)
        if not positions:
            raise MalformedRow(f"no cached patches for slide {slide_id!r}")
        rows = [reader.get(slide_id, r, c, variant) for r, c in positions]
        bags.append(make_bag(slide_id, np.stack(rows).astype(np.float64), label))
    return bags


# -- preproc ---------------------------------------------------------------------

def cmd_preproc_tile(args):
    slide = load_image(args.input)
    slide_id = args.slide_id or Path(args.input).stem
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    patches = tile(slide, args.patch_size, slide_id)
    for patch in patches:
        row, col = patch.grid_pos
        save_image(out / f"{slide_id}_r{row}_c{col}.png", patch.pixels)
    print(f"wrote {len(patches)} patches to {out}")
    return 0


def cmd_preproc_macenko(args):
    slide = load_image(args.input)
    out = normalise_slide(slide, mode=args.mode, patch_size=args.patch_size)
    save_image(args.out, out)
    print(f"wrote {args.out}")
    return 0


def cmd_preproc_augment(args):
    from .preproc.tile import Patch
    pixels = load_image(args.input)
    spec = sample_spec(args.kind, rng_seed=args.seed)
    patch = Patch(pixels=pixels, slide_id="cli", grid_pos=(0, 0))
    save_image(args.out, apply_augmentation(patch, spec).pixels)
    print(f"wrote {args.out} ({args.kind})")
    return 0


def cmd_preproc_cache(args):
    patches = []
    for path in args.inputs:
        slide = load_image(path)
        patches.extend(tile(slide, args.patch_size, Path(path).stem))
    if args.variants == "all":
        kinds = list(AUGMENTATION_KINDS)
    elif args.variants == "none":
        kinds = []
    else:
        kinds = [k.strip() for k in args.variants.split(",") if k.strip()]
    specs = [sample_spec(kind, rng_seed=rngmod.derive_seed(args.seed, "cachespec", kind))
             for kind in kinds]
    embedder = RandomProjectionEmbedder(name="cli", embed_seed=args.embed_seed,
                                        d_x=args.d_x, signal_gain=args.signal_gain)
    report = build_feature_cache(args.out, patches, specs, embedder)
    print(json.dumps(report))
    return 0


# -- mil -------------------------------------------------------------------------

def cmd_mil_train(args):
    reader = FeatureCacheReader(args.cache)
    labels = read_labels(args.labels)
    bags = _bags_from_cache_cli(reader, labels, args.variant)
    config = (TrainConfig.from_json(Path(args.config).read_text())
              if args.config else TrainConfig(rng_seed=args.seed))
    train_bags, val_bags = split_train_val(bags, config.val_fraction,
                                           rngmod.substream(config.rng_seed, "split"))
    n_classes = max(labels.values()) + 1
    dims = ModelDims(d_in=reader.d_x, n_classes=n_classes, proj_dim=args.proj_dim,
                     attn_hidden=args.attn_hidden, n_heads=args.n_heads,
                     ff_dim=args.ff_dim, n_layers=args.n_layers)
    params, info = train(train_bags, val_bags, config, args.model, dims)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tensors = {f"tensor_{k}": v for k, v in params.tensors.items()}
    np.savez(out / "params.npz", variant=args.model,
             dims=json.dumps(dims.__dict__), **tensors)
    with open(out / "history.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
        writer.writerows(info["history"])
    (out / "train_config.json").write_text(config.to_json())
    print(f"best epoch {info['best_epoch']} (val loss {info['best_val_loss']:.6f}); "
          f"artifacts in {out}")
    return 0


def load_params(path):
    from .mil.model import AggregatorParams
    with np.load(path, allow_pickle=False) as blob:
        variant = str(blob["variant"])
        dims = ModelDims(**json.loads(str(blob["dims"])))
        tensors = {k[len("tensor_"):]: blob[k].copy() for k in blob.files
                   if k.startswith("tensor_")}
    return AggregatorParams(variant=variant, dims=dims, tensors=tensors)


def cmd_mil_eval(args):
    reader = FeatureCacheReader(args.cache)
    labels = read_labels(args.labels)
    bags = _bags_from_cache_cli(reader, labels, args.variant)
    params = load_params(args.params)
    preds = evaluate(params, bags)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTIONS_HEADER)
        for sid, score, label in preds.samples:
            writer.writerow([args.task, params.variant, args.extractor, args.run_seed,
                             args.augmentation, args.magnification, sid, repr(score), label])
    try:
        value = auroc(preds).value
        print(f"AUROC {value:.6f} over {len(preds.samples)} samples -> {args.out}")
    except ValidationError:
        print(f"wrote {args.out} (single-class set; AUROC undefined)")
    return 0


# -- analysis --------------------------------------------------------------------

def _filter_grids(grids, model, augmentation, magnification):
    out = [g for g in grids
           if (model is None or g.model == model)
           and (augmentation is None or g.augmentation == augmentation)
           and (magnification is None or g.magnification == magnification)]
    if not out:
        raise EmptyReport("no score grids match the requested filters")
    return out


def cmd_nds(args):
    grids = ingest_scores(args.scores, expected_s=args.expected_seeds)
    grids = _filter_grids(grids, args.model, args.augmentation, args.magnification)
    if args.method == "enumerate":
        def method(grid):
            return nds_enumerate(grid, cap=args.cap)
    else:
        method = nds_exact

    if args.cross_magnification:
        by_task: dict[str, list] = {}
        for grid in grids:
            by_task.setdefault(grid.task, []).append(grid)
        results = {task: cross_config_nds(task_grids)
                   for task, task_grids in sorted(by_task.items())}
    else:
        results = {}
        for grid in grids:
            if grid.task in results:
                raise EmptyReport(
                    f"task {grid.task!r} matches several grids; add --model/--augmentation/"
                    "--magnification filters")
            results[grid.task] = method(grid)

    average = task_average(list(results.values())) if len(results) > 1 else None
    table = render_nds_table(results, average)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "nds_table.txt").write_text(table)
    write_nds_csv(out / "nds.csv", results, average)
    print(table, end="")
    return 0


def _group_predictions(preds: list[PredictionSet], field: str):
    grouped: dict[tuple, dict[tuple, dict[str, PredictionSet]]] = {}
    for p in preds:
        k = p.key
        condition = getattr(k, field)
        scope = (k.model, k.extractor)
        grouped.setdefault(scope, {}).setdefault((k.task, k.seed), {})[condition] = p
    return grouped


def cmd_bootstrap(args):
    preds = ingest_predictions(args.predictions)
    grouped = _group_predictions(preds, args.field)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    diff_rows = []
    for (model, extractor), pair_map in sorted(grouped.items()):
        pairs = []
        for (task, seed), conditions in sorted(pair_map.items()):
            if args.condition_a in conditions and args.condition_b in conditions:
                pairs.append((task, seed, conditions[args.condition_a],
                              conditions[args.condition_b]))
        if not pairs:
            continue
        runs = make_paired_runs(args.condition_a, args.condition_b, pairs)
        dist = bootstrap_diff(runs, b=args.bootstraps, rng_seed=args.seed)
        record = {"model": model, "extractor": extractor,
                  "condition_a": args.condition_a, "condition_b": args.condition_b,
                  "pairs": len(pairs), "boxplot": summarize_boxplot(dist)}
        records.append(record)
        for i, value in enumerate(dist.differences):
            diff_rows.append([model, extractor, i, repr(float(value))])
    if not records:
        raise EmptyReport("no (task, seed) pairs carry both conditions")
    (out / "bootstrap_summary.json").write_text(json.dumps(records, indent=2) + "\n")
    with open(out / "bootstrap_differences.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "extractor", "index", "difference"])
        writer.writerows(diff_rows)
    print(f"wrote {out / 'bootstrap_summary.json'} ({len(records)} records)")
    return 0


def read_embeddings_csv(path) -> EmbeddingTable:
    table = EmbeddingTable()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["id", "class_label", "variant"]:
            raise MalformedRow(f"{path}: expected header id,class_label,variant,v0,...")
        for row in reader:
            if not row:
                continue
            table.add(row[0], row[1], row[2], [float(v) for v in row[3:]])
    return table.validate()


def table_from_cache(cache_path, labels_path) -> EmbeddingTable:
    """EmbeddingTable from a feature cache; one entry per patch, classed by
    its slide's label."""
    reader = FeatureCacheReader(cache_path)
    labels = read_labels(labels_path)
    table = EmbeddingTable()
    for slide_id, label in sorted(labels.items()):
        for row, col in reader.positions(slide_id):
            entry_id = f"{slide_id}:{row}:{col}"
            for variant in reader.variants:
                table.add(entry_id, str(label), variant,
                          reader.get(slide_id, row, col, variant).astype(np.float64))
    return table.validate()


def cmd_latent(args):
    if args.cache:
        if not args.labels:
            raise MalformedRow("--cache input needs --labels for class labels")
        table = table_from_cache(args.cache, args.labels)
    elif args.embeddings:
        table = read_embeddings_csv(args.embeddings)
    else:
        raise MalformedRow("provide --embeddings or --cache/--labels")
    record = displacement_summary(table, n_pairs=args.pairs, rng_seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "latent_summary.json").write_text(json.dumps(record, indent=2) + "\n")
    with open(out / "latent_distances.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "id", "distance"])
        for variant in record["variants"]:
            result = displacement_stats(table, variant)
            for entry_id, value in zip(result.ids, result.distances):
                writer.writerow([variant, entry_id, repr(float(value))])
    print(f"wrote {out / 'latent_summary.json'}")
    return 0


# -- matrix ----------------------------------------------------------------------

def cmd_matrix_run(args):
    config = ExperimentConfig.from_json(Path(args.config).read_text())
    report = run_matrix(config, args.out, threads=args.threads)
    print(json.dumps(report))
    return 0


def cmd_matrix_report(args):
    rc = cmd_nds(args)
    if rc == 0 and args.predictions:
        rc = cmd_bootstrap(args)
    return rc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master RNG seed")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out", default="out", help="output file or directory")

    parser = argparse.ArgumentParser(prog="wsi-benchkit")
    sub = parser.add_subparsers(dest="command", required=True)

    preproc = sub.add_parser("preproc", help="tiling, stain normalisation, augmentation, cache")
    psub = preproc.add_subparsers(dest="subcommand", required=True)

    p = psub.add_parser("tile", parents=[common])
    p.add_argument("--input", required=True)
    p.add_argument("--patch-size", type=int, default=224)
    p.add_argument("--slide-id")
    p.set_defaults(func=cmd_preproc_tile)

    p = psub.add_parser("macenko", parents=[common])
    p.add_argument("--input", required=True)
    p.add_argument("--mode", choices=["slidewise", "patchwise"], default="slidewise")
    p.add_argument("--patch-size", type=int, default=224)
    p.set_defaults(func=cmd_preproc_macenko)

    p = psub.add_parser("augment", parents=[common])
    p.add_argument("--input", required=True)
    p.add_argument("--kind", choices=AUGMENTATION_KINDS, required=True)
    p.set_defaults(func=cmd_preproc_augment)

    p = psub.add_parser("cache", parents=[common])
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--patch-size", type=int, default=224)
    p.add_argument("--d-x", type=int, default=24)
    p.add_argument("--embed-seed", type=int, default=0)
    p.add_argument("--signal-gain", type=float, default=0.0)
    p.add_argument("--variants", default="none",
                   help="'all', 'none', or comma-separated augmentation kinds")
    p.set_defaults(func=cmd_preproc_cache)

    mil = sub.add_parser("mil", help="train or evaluate bag classifiers")
    msub = mil.add_subparsers(dest="subcommand", required=True)

    p = msub.add_parser("train", parents=[common])
    p.add_argument("--cache", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--variant", default=ORIGINAL_VARIANT)
    p.add_argument("--model", choices=["mean_pool", "attmil", "transformer"], default="attmil")
    p.add_argument("--config", help="TrainConfig JSON")
    p.add_argument("--proj-dim", type=int, default=512)
    p.add_argument("--attn-hidden", type=int, default=256)
    p.add_argument("--n-heads", type=int, default=8)
    p.add_argument("--ff-dim", type=int, default=2048)
    p.add_argument("--n-layers", type=int, default=2)
    p.set_defaults(func=cmd_mil_train)

    p = msub.add_parser("eval", parents=[common])
    p.add_argument("--cache", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--variant", default=ORIGINAL_VARIANT)
    p.add_argument("--task", default="adhoc")
    p.add_argument("--extractor", default="adhoc")
    p.add_argument("--run-seed", type=int, default=1)
    p.add_argument("--augmentation", default="none")
    p.add_argument("--magnification", default="low")
    p.set_defaults(func=cmd_mil_eval)

    p = sub.add_parser("nds", parents=[common],
                       help="relative-performance tables from a scores CSV")
    _add_nds_args(p)
    p.set_defaults(func=cmd_nds)

    p = sub.add_parser("bootstrap", parents=[common],
                       help="paired bootstrap of condition differences")
    _add_bootstrap_args(p)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("latent", parents=[common], help="embedding displacement analysis")
    p.add_argument("--embeddings", help="CSV of id,class_label,variant,v0,...")
    p.add_argument("--cache", help="feature-cache binary (needs --labels)")
    p.add_argument("--labels", help="slide_id,label CSV classifying cache slides")
    p.add_argument("--pairs", type=int, default=10_000)
    p.set_defaults(func=cmd_latent)

    matrix = sub.add_parser("matrix", help="synthetic end-to-end benchmark")
    xsub = matrix.add_subparsers(dest="subcommand", required=True)

    p = xsub.add_parser("run", parents=[common])
    p.add_argument("--config", required=True, help="ExperimentConfig JSON")
    p.set_defaults(func=cmd_matrix_run)

    p = xsub.add_parser("report", parents=[common])
    _add_nds_args(p)
    _add_bootstrap_args(p, required=False)
    p.set_defaults(func=cmd_matrix_report)

    return parser


def _add_nds_args(p):
    p.add_argument("--scores", required=True)
    p.add_argument("--expected-seeds", type=int, required=True)
    p.add_argument("--model")
    p.add_argument("--augmentation")
    p.add_argument("--magnification")
    p.add_argument("--method", choices=["exact", "enumerate"], default="exact")
    p.add_argument("--cap", type=int, default=DEFAULT_ENUMERATION_CAP)
    p.add_argument("--cross-magnification", action="store_true",
                   help="rank each (extractor, magnification) pairing as its own row")


def _add_bootstrap_args(p, required=True):
    p.add_argument("--predictions", required=required)
    p.add_argument("--field", choices=["augmentation", "magnification"],
                   default="augmentation")
    p.add_argument("--condition-a", default="macenko_slide")
    p.add_argument("--condition-b", default="none")
    p.add_argument("--bootstraps", "-B", type=int, default=25)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures
        print(f"failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
