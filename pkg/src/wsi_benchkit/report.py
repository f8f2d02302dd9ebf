"""Table and plot-data emitters.

Human-readable tables round to 3 decimals and mark the per-column minimum
(lower is better) in bold; machine CSVs carry full precision so the rounding
never propagates.
"""

from __future__ import annotations

import csv

from .errors import EmptyReport
from .nds import NdsResult, TaskAverage

AVERAGE_COLUMN = "Average"


def _cell(mean: float, std: float, bold: bool) -> str:
    text = f"{mean:.3f} ± {std:.3f}"
    return f"**{text}**" if bold else text


def render_nds_table(results_by_task: dict[str, NdsResult],
                     average: TaskAverage | None = None) -> str:
    """Rows = extractors, columns = tasks (+ Average), minima bolded."""
    if not results_by_task:
        raise EmptyReport("no results to render")
    tasks = sorted(results_by_task)
    extractors = results_by_task[tasks[0]].extractors
    columns = tasks + ([AVERAGE_COLUMN] if average is not None else [])

    values: dict[str, list[tuple[float, float]]] = {}
    for task in tasks:
        result = results_by_task[task]
        if result.extractors != extractors:
            raise EmptyReport("extractor sets differ between tasks")
        values[task] = [(m, s) for _, m, s in result.per_extractor]
    if average is not None:
        values[AVERAGE_COLUMN] = [(m, s) for _, m, s, _ in average.per_extractor]

    minima = {col: min(m for m, _ in values[col]) for col in columns}
    header = ["extractor"] + columns
    rows = [header]
    for i, ext in enumerate(extractors):
        row = [ext]
        for col in columns:
            mean, std = values[col][i]
            row.append(_cell(mean, std, bold=(mean == minima[col])))
        rows.append(row)

    widths = [max(len(r[c]) for r in rows) for c in range(len(header))]
    lines = []
    for r, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[c]) for c, cell in enumerate(row)).rstrip())
        if r == 0:
            lines.append("  ".join("-" * widths[c] for c in range(len(header))))
    return "\n".join(lines) + "\n"


def write_nds_csv(path, results_by_task: dict[str, NdsResult],
                  average: TaskAverage | None = None) -> None:
    """Full-precision machine table, one row per (task, extractor)."""
    if not results_by_task:
        raise EmptyReport("no results to write")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "extractor", "mean", "std"])
        for task in sorted(results_by_task):
            for ext, mean, std in results_by_task[task].per_extractor:
                writer.writerow([task, ext, repr(mean), repr(std)])
        if average is not None:
            for ext, mean, pooled, across in average.per_extractor:
                writer.writerow([AVERAGE_COLUMN, ext, repr(mean), repr(pooled)])
                writer.writerow([AVERAGE_COLUMN + "_across_task_std", ext,
                                 repr(mean), repr(across)])


def bold_extractors_per_column(table_text: str) -> dict[str, list[str]]:
    """Parse which extractor rows carry the bold marker in each column."""
    lines = table_text.splitlines()
    columns = lines[0].split()[1:]
    marked: dict[str, list[str]] = {col: [] for col in columns}
    for line in lines[2:]:
        parts = [p for p in line.split("  ") if p.strip()]
        ext = parts[0].strip()
        for col, cell in zip(columns, parts[1:]):
            if "**" in cell:
                marked[col].append(ext)
    return marked
