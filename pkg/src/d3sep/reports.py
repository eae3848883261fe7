"""CSV reports and their rendered figures.

Every report command writes delimited output plus a PNG next to it; figures
use the Agg backend so they render headless.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .blocks import D2Block, D3Block, SeparationModel
from .rf import BlockReport


def _figure_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".png")


def plot_rf_report(report: BlockReport, csv_path) -> Path:
    """Raster of per-path coverage: rows are paths, columns input offsets."""
    lo, hi = report.union.span
    width = hi - lo + 1
    grid = np.zeros((len(report.coverages), width))
    for r, cov in enumerate(report.coverages):
        for off in cov.offsets:
            grid[r, off - lo] = 1.0
        slo, shi = cov.span
        for off in range(slo, shi + 1):
            if off not in cov.offsets:
                grid[r, off - lo] = 0.4
    fig, ax = plt.subplots(figsize=(max(6, width / 4), 1 + 0.35 * len(report.coverages)))
    ax.imshow(grid, aspect="auto", cmap="viridis", interpolation="nearest",
              extent=(lo - 0.5, hi + 0.5, len(report.coverages) - 0.5, -0.5))
    ax.set_yticks(range(len(report.paths)))
    ax.set_yticklabels([p.label() for p in report.paths], fontsize=7)
    ax.set_xlabel("input offset")
    ax.set_title(f"coverage, scheme={report.scheme}, L={report.num_layers}, "
                 f"kernel={report.kernel_size} (dim=gap, bright=covered)")
    out = _figure_path(csv_path)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def weight_norm_rows(model: SeparationModel) -> list[dict]:
    """Per-skip-group L1 kernel norms at the last layer of the first dense
    block stack, normalized by the no-skip group (highest skip index)."""
    block = first_d3_block(model)
    conv = block.blocks[-1].convs[-1]
    norms = [float(np.abs(k.data).sum()) for k in conv.kernels]
    base = norms[-1] if norms[-1] > 0 else 1.0
    rows = []
    for i, (norm, d) in enumerate(zip(norms, conv.dilations)):
        rows.append({"skip_index": i, "dilation": d, "l1_norm": norm,
                     "normalized": norm / base})
    return rows


def first_d3_block(model: SeparationModel) -> D3Block:
    name = "full" if "full" in model.streams else sorted(model.streams)[0]
    return model.streams[name].encoder[0]


def write_weight_norms(model: SeparationModel, csv_path) -> list[dict]:
    rows = weight_norm_rows(model)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["skip_index", "dilation", "l1_norm", "normalized"])
        writer.writeheader()
        writer.writerows(rows)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar([r["skip_index"] for r in rows], [r["normalized"] for r in rows],
           color="tab:blue")
    ax.set_xlabel("skip index (0 = block input)")
    ax.set_ylabel("normalized L1 norm")
    ax.set_title("kernel group norms, last layer of first dense stack")
    fig.tight_layout()
    fig.savefig(_figure_path(csv_path), dpi=120)
    plt.close(fig)
    return rows


def write_loss_history(history: list[float], csv_path):
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for i, value in enumerate(history, 1):
            writer.writerow([i, f"{value:.10g}"])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(range(1, len(history) + 1), history, marker="o", ms=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean training loss")
    ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(_figure_path(csv_path), dpi=120)
    plt.close(fig)


def write_sdr_report(rows: list[dict], csv_path):
    """rows: dicts with scene, source, sdr_db (plus optional extras)."""
    if not rows:
        raise ValueError("no scores to report")
    fields = list(rows[0].keys())
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    by_source = {}
    for r in rows:
        if r.get("scene") == "MEDIAN":
            continue
        by_source.setdefault(r["source"], []).append(float(r["sdr_db"]))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if by_source:
        names = sorted(by_source)
        ax.boxplot([by_source[n] for n in names], tick_labels=names)
        ax.set_title("per-scene windowed SDR")
    else:
        # Aggregate-only reports (every row is a MEDIAN row) have one value
        # per label, so a boxplot degenerates; draw bars instead.
        names = [r["source"] for r in rows]
        ax.bar(range(len(names)), [float(r["sdr_db"]) for r in rows])
        ax.set_xticks(range(len(names)), names, rotation=30, ha="right")
        ax.set_title("median windowed SDR")
    ax.set_ylabel("SDR (dB)")
    fig.tight_layout()
    fig.savefig(_figure_path(csv_path), dpi=120)
    plt.close(fig)
