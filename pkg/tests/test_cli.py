import csv
import json

import numpy as np
import pytest
from PIL import Image

from wsi_benchkit.cli import main
from wsi_benchkit.matrix import EmbedderSpec, ExperimentConfig
from wsi_benchkit.preproc.synthimg import synthetic_stain_image


@pytest.fixture()
def slide_png(tmp_path):
    gen = np.random.default_rng(0)
    path = tmp_path / "slide0.png"
    Image.fromarray(synthetic_stain_image(gen, 64, 64), mode="RGB").save(path)
    return path


def run(*argv):
    return main([str(a) for a in argv])


def test_tile_command(tmp_path, slide_png):
    out = tmp_path / "patches"
    assert run("preproc", "tile", "--input", slide_png, "--patch-size", 32, "--out", out) == 0
    assert len(list(out.glob("*.png"))) == 4


def test_tile_too_small_is_validation_error(tmp_path, slide_png):
    assert run("preproc", "tile", "--input", slide_png, "--patch-size", 128,
               "--out", tmp_path / "x") == 2


def test_macenko_command(tmp_path, slide_png):
    out = tmp_path / "normalised.png"
    assert run("preproc", "macenko", "--input", slide_png, "--mode", "slidewise",
               "--out", out) == 0
    assert out.exists()


def test_augment_command(tmp_path, slide_png):
    out = tmp_path / "aug.png"
    assert run("preproc", "augment", "--input", slide_png, "--kind", "rotate90",
               "--out", out) == 0
    original = np.asarray(Image.open(slide_png))
    rotated = np.asarray(Image.open(out))
    assert np.array_equal(rotated, np.rot90(original))


def test_cache_and_mil_commands(tmp_path):
    gen = np.random.default_rng(1)
    slide_paths = []
    labels_rows = []
    for i in range(10):
        path = tmp_path / f"s{i}.png"
        pixels = synthetic_stain_image(gen, 64, 64)
        if i % 2 == 1:
            red = pixels[..., 0].astype(int) + 40
            pixels[..., 0] = np.clip(red, 0, 255).astype(np.uint8)
        Image.fromarray(pixels, mode="RGB").save(path)
        slide_paths.append(path)
        labels_rows.append((f"s{i}", i % 2))
    labels = tmp_path / "labels.csv"
    with open(labels, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slide_id", "label"])
        writer.writerows(labels_rows)

    cache = tmp_path / "cache.wbk"
    assert run("preproc", "cache", "--inputs", *slide_paths, "--patch-size", 32,
               "--d-x", 16, "--embed-seed", 3, "--signal-gain", 3.0,
               "--variants", "none", "--out", cache) == 0

    train_cfg = tmp_path / "train.json"
    train_cfg.write_text(json.dumps({
        "lr": 0.01, "max_epochs": 4, "rng_seed": 0,
        "cosine_anneal": {"T_max": 4, "eta_min": 0.0},
    }))
    out_dir = tmp_path / "model"
    assert run("mil", "train", "--cache", cache, "--labels", labels,
               "--model", "attmil", "--config", train_cfg,
               "--proj-dim", 16, "--attn-hidden", 8, "--n-heads", 2,
               "--out", out_dir) == 0
    assert (out_dir / "params.npz").exists()
    history = (out_dir / "history.csv").read_text().splitlines()
    assert history[0] == "epoch,train_loss,val_loss,lr"
    assert len(history) >= 2

    preds = tmp_path / "preds.csv"
    assert run("mil", "eval", "--cache", cache, "--labels", labels,
               "--params", out_dir / "params.npz", "--out", preds) == 0
    rows = list(csv.reader(open(preds)))
    assert rows[0][:6] == ["task", "model", "extractor", "seed", "augmentation",
                           "magnification"]
    assert len(rows) == 11


def scores_csv(tmp_path):
    path = tmp_path / "scores.csv"
    rows = [["task", "model", "extractor", "seed", "augmentation", "magnification", "auroc"]]
    rng = np.random.default_rng(5)
    for task in ("t1", "t2"):
        for ext in ("e1", "e2", "e3"):
            for seed in (1, 2):
                rows.append([task, "attmil", ext, seed, "none", "low",
                             f"{rng.uniform(0.5, 1.0):.6f}"])
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    return path


def test_nds_command(tmp_path):
    scores = scores_csv(tmp_path)
    out = tmp_path / "nds"
    assert run("nds", "--scores", scores, "--expected-seeds", 2, "--out", out) == 0
    table = (out / "nds_table.txt").read_text()
    assert "Average" in table and "**" in table
    assert (out / "nds.csv").exists()


def test_nds_methods_agree(tmp_path):
    scores = scores_csv(tmp_path)
    out_a = tmp_path / "exact"
    out_b = tmp_path / "enum"
    assert run("nds", "--scores", scores, "--expected-seeds", 2, "--method", "exact",
               "--out", out_a) == 0
    assert run("nds", "--scores", scores, "--expected-seeds", 2, "--method", "enumerate",
               "--out", out_b) == 0
    assert (out_a / "nds_table.txt").read_text() == (out_b / "nds_table.txt").read_text()


def test_nds_missing_cell_exit_code(tmp_path):
    scores = scores_csv(tmp_path)
    lines = scores.read_text().splitlines()
    scores.write_text("\n".join(lines[:-1]) + "\n")
    assert run("nds", "--scores", scores, "--expected-seeds", 2,
               "--out", tmp_path / "x") == 2


def predictions_csv(tmp_path):
    path = tmp_path / "preds.csv"
    rng = np.random.default_rng(6)
    rows = [["task", "model", "extractor", "seed", "augmentation", "magnification",
             "sample_id", "score", "label"]]
    for task in ("t1", "t2"):
        for seed in (1, 2):
            labels = [0, 1] * 4
            for aug in ("none", "macenko_slide"):
                for i, label in enumerate(labels):
                    rows.append([task, "attmil", "e1", seed, aug, "low",
                                 f"x{i}", f"{rng.random():.6f}", label])
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    return path


def test_bootstrap_command(tmp_path):
    preds = predictions_csv(tmp_path)
    out = tmp_path / "boot"
    assert run("bootstrap", "--predictions", preds, "--condition-a", "macenko_slide",
               "--condition-b", "none", "-B", 5, "--out", out) == 0
    summary = json.loads((out / "bootstrap_summary.json").read_text())
    assert summary[0]["extractor"] == "e1"
    assert summary[0]["pairs"] == 4
    diffs = list(csv.reader(open(out / "bootstrap_differences.csv")))
    assert len(diffs) - 1 == 4 * 5


def test_latent_command(tmp_path):
    path = tmp_path / "emb.csv"
    rng = np.random.default_rng(7)
    rows = [["id", "class_label", "variant", "v0", "v1", "v2"]]
    for i in range(8):
        cls = "a" if i < 4 else "b"
        base = rng.normal(size=3) + (0 if cls == "a" else 5)
        rows.append([f"p{i}", cls, "original"] + [f"{v:.6f}" for v in base])
        rows.append([f"p{i}", cls, "noisy"] + [f"{v:.6f}" for v in base + rng.normal(size=3) * 0.1])
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    out = tmp_path / "latent"
    assert run("latent", "--embeddings", path, "--pairs", 50, "--out", out) == 0
    record = json.loads((out / "latent_summary.json").read_text())
    assert "noisy" in record["variants"]
    assert record["dispersion"] > 0


def test_latent_from_cache(tmp_path):
    gen = np.random.default_rng(8)
    slide_paths = []
    label_rows = []
    for i in range(4):
        path = tmp_path / f"c{i}.png"
        Image.fromarray(synthetic_stain_image(gen, 64, 64), mode="RGB").save(path)
        slide_paths.append(path)
        label_rows.append((f"c{i}", i % 2))
    labels = tmp_path / "labels.csv"
    with open(labels, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slide_id", "label"])
        writer.writerows(label_rows)
    cache = tmp_path / "cache.wbk"
    assert run("preproc", "cache", "--inputs", *slide_paths, "--patch-size", 32,
               "--d-x", 12, "--variants", "flip_h,rotate90", "--out", cache) == 0
    out = tmp_path / "latent"
    assert run("latent", "--cache", cache, "--labels", labels, "--pairs", 40,
               "--out", out) == 0
    record = json.loads((out / "latent_summary.json").read_text())
    assert set(record["variants"]) == {"flip_h", "rotate90"}


def test_bootstrap_incomplete_grid_is_validation_error(tmp_path):
    preds = predictions_csv(tmp_path)
    lines = preds.read_text().splitlines()
    preds.write_text("\n".join(lines[:-8]) + "\n")  # drop one (task, seed, cond) block
    assert run("bootstrap", "--predictions", preds, "--condition-a", "macenko_slide",
               "--condition-b", "none", "--out", tmp_path / "b") == 2


@pytest.mark.slow
def test_matrix_run_and_report_commands(tmp_path):
    config = ExperimentConfig(
        tasks=("taskA",),
        extractors=(EmbedderSpec("embA", 11, 3.0), EmbedderSpec("embB", 22, 0.5)),
        models=("attmil",),
        augment_groups=("none", "rotate_flip"),
        seeds=(1, 2),
        slide_grid=2, n_train=8, n_val=4, n_test=6, max_epochs=4,
    )
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(config.to_json())
    out = tmp_path / "run"
    assert run("matrix", "run", "--config", cfg_path, "--out", out) == 0
    assert (out / "scores.csv").exists()

    report_dir = tmp_path / "report"
    assert run("matrix", "report", "--scores", out / "scores.csv",
               "--expected-seeds", 2, "--augmentation", "none",
               "--predictions", out / "predictions.csv",
               "--condition-a", "rotate_flip", "--condition-b", "none",
               "-B", 5, "--out", report_dir) == 0
    assert (report_dir / "nds_table.txt").exists()
    assert (report_dir / "bootstrap_summary.json").exists()
