"""Runs a small but complete benchmark matrix and all downstream analyses.

Three stand-in extractors of decreasing quality, two aggregation models,
three augmentation groups, three seeds, one synthetic task.  Produces under
the output directory (default out/demo):

    scores.csv, predictions.csv          raw per-run results
    nds_table.txt, nds.csv               relative-performance tables
    bootstrap_summary.json               condition-difference boxplots
    latent_summary.json                  displacement analysis of one cache

Usage: python3 scripts/run_demo_matrix.py [out_dir] [--threads N]
"""

import json
import sys
import time
from pathlib import Path

from wsi_benchkit.cli import main as cli_main
from wsi_benchkit.matrix import EmbedderSpec, ExperimentConfig, run_matrix

CONFIG = ExperimentConfig(
    tasks=("marker_a",),
    extractors=(
        EmbedderSpec("path-strong", embed_seed=101, signal_gain=3.0),
        EmbedderSpec("path-mid", embed_seed=202, signal_gain=1.2),
        EmbedderSpec("imagenet-weak", embed_seed=303, signal_gain=0.3),
    ),
    models=("attmil", "mean_pool"),
    augment_groups=("none", "rotate_flip", "macenko_patch"),
    seeds=(1, 2, 3),
    master_seed=7,
)


def main():
    args = [a for a in sys.argv[1:] if not a.startswith("--")]
    out = Path(args[0]) if args else Path("out/demo")
    threads = 1
    if "--threads" in sys.argv:
        threads = int(sys.argv[sys.argv.index("--threads") + 1])

    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(CONFIG.to_json())

    start = time.perf_counter()
    report = run_matrix(CONFIG, out, threads=threads)
    print(f"matrix: {report['cells']} cells in {time.perf_counter() - start:.1f}s")

    rc = cli_main(["nds", "--scores", str(out / "scores.csv"), "--expected-seeds", "3",
                   "--augmentation", "none", "--model", "attmil", "--out", str(out)])
    rc |= cli_main(["bootstrap", "--predictions", str(out / "predictions.csv"),
                    "--field", "augmentation",
                    "--condition-a", "macenko_patch", "--condition-b", "none",
                    "-B", "25", "--out", str(out)])
    summary = json.loads((out / "bootstrap_summary.json").read_text())
    for record in summary:
        box = record["boxplot"]
        print(f"  {record['model']}/{record['extractor']}: median diff "
              f"{box['median']:+.4f}  95% [{box['whiskers'][0]:+.4f}, {box['whiskers'][1]:+.4f}]")

    # latent displacement over one of the caches the matrix built
    cache = next(out.glob("cache_*_path-strong.wbk"))
    labels = out / "latent_labels.csv"
    rows = ["slide_id,label"]
    from wsi_benchkit.matrix import generate_task_data
    _, records = generate_task_data(CONFIG, "marker_a", "low")
    rows += [f"{r.slide_id},{r.label}" for r in records if r.split == "test"]
    labels.write_text("\n".join(rows) + "\n")
    rc |= cli_main(["latent", "--cache", str(cache), "--labels", str(labels),
                    "--pairs", "2000", "--out", str(out)])
    sys.exit(rc)


if __name__ == "__main__":
    main()
