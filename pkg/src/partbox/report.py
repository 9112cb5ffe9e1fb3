"""Report rendering: CSV/JSON outputs with matplotlib figures alongside.

Every command that writes a delimited artifact (loss curves, metric
tables, ablation tables) also renders a PNG figure next to it, so runs
are inspectable at a glance.
"""

from __future__ import annotations

import csv
import json

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import MetricReport
from .shapeio import canonical_json


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(canonical_json(obj))
        fh.write("\n")


def write_loss_curve_csv(path, curves: dict):
    """Columns: epoch, then one column per named curve."""
    names = sorted(curves)
    length = max(len(c) for c in curves.values())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch"] + names)
        for e in range(length):
            row = [e]
            for n in names:
                c = curves[n]
                row.append(f"{c[e]:.10g}" if e < len(c) else "")
            writer.writerow(row)


def loss_curve_figure(path, curves: dict, title: str = "training loss"):
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in sorted(curves):
        ax.plot(range(len(curves[name])), curves[name], label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_title(title)
    if len(curves) > 1 or any(curves):
        ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_ablation_csv(path, rows: list, value_keys: list):
    """Rows are dicts with 'arm' plus metric values per seed/column."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["arm"] + value_keys)
        for row in rows:
            writer.writerow([row["arm"]] + [f"{row[k]:.10g}" for k in value_keys])


def ablation_bar_figure(path, rows: list, value_key: str, ylabel: str, title: str):
    arms = [r["arm"] for r in rows]
    values = [r[value_key] for r in rows]
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.bar(arms, values, color=["#4878d0", "#ee854a", "#6acc64", "#d65f5f"][: len(arms)])
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    for i, v in enumerate(values):
        ax.text(i, v, f"{v:.3g}", ha="center", va="bottom", fontsize=9)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ablation_text_table(rows: list, value_keys: list) -> str:
    header = ["arm"] + value_keys
    table = [header] + [
        [r["arm"]] + [f"{r[k]:.6g}" for k in value_keys] for r in rows
    ]
    widths = [max(len(row[c]) for row in table) for c in range(len(header))]
    return "\n".join(
        "  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in table
    )


def metric_report_figure(path, report: MetricReport, value_key: str = "emd_aligned"):
    cats = sorted(report.per_category)
    values = [report.per_category[c][value_key] for c in cats]
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.bar(cats, values, color="#4878d0")
    ax.set_ylabel(value_key)
    ax.set_title("per-category " + value_key)
    for i, v in enumerate(values):
        ax.text(i, v, f"{v:.4f}", ha="center", va="bottom", fontsize=9)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_metric_report(out_prefix: str, report: MetricReport):
    """JSON + aligned text table + PNG figure under a common prefix."""
    write_json(out_prefix + ".json", report.to_dict())
    with open(out_prefix + ".txt", "w") as fh:
        fh.write(report.to_text_table())
        fh.write("\n")
    metric_report_figure(out_prefix + ".png", report)
