"""Render the plot-data CSVs to PNG figures.

This is a convenience layer over the delimited output: every figure is a
straight visualization of one plots/*.csv file, so the CSVs stay the
authoritative machine interface.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  backend must be pinned first


def _read_panel(path: Path) -> tuple[list[str], list[float], list[float]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["bin_label", "reference", "generated"]:
            raise ValueError(f"{path.name}: unexpected header {header}")
        labels, ref, gen = [], [], []
        for row in reader:
            labels.append(row[0])
            ref.append(float(row[1]))
            gen.append(float(row[2]))
    return labels, ref, gen


def render_panel(csv_path: str | Path, out_path: str | Path) -> Path:
    """One grouped bar chart: reference vs generated, straight off the CSV."""
    csv_path = Path(csv_path)
    out_path = Path(out_path)
    labels, ref, gen = _read_panel(csv_path)
    x = range(len(labels))
    width = 0.42

    fig, ax = plt.subplots(figsize=(max(6.0, 0.45 * len(labels)), 4.0))
    ax.bar([i - width / 2 for i in x], ref, width, label="reference", color="#4878d0")
    ax.bar([i + width / 2 for i in x], gen, width, label="generated", color="#ee854a")
    ax.set_xticks(list(x))
    rotation = 90 if len(labels) > 15 or max(len(l) for l in labels) > 6 else 0
    ax.set_xticklabels(labels, rotation=rotation, fontsize=8)
    ax.set_ylabel("share")
    ax.set_title(csv_path.stem.replace("_", " "))
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def render_all(plots_dir: str | Path, figures_dir: str | Path) -> list[Path]:
    """PNG per plot CSV; returns the written paths sorted by name."""
    plots_dir = Path(plots_dir)
    figures_dir = Path(figures_dir)
    figures_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for csv_path in sorted(plots_dir.glob("*.csv")):
        written.append(render_panel(csv_path, figures_dir / (csv_path.stem + ".png")))
    return written
