"""Report emission: delimited outputs, a hand-rolled SVG scatter and
matplotlib figures rendered next to them.

Everything written here is deterministic: fixed float formatting, sorted
keys, no timestamps, and PNG metadata stripped.
"""

from __future__ import annotations

import csv
import json
import os
import shutil

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import StageMissingError

# cluster palette; noise gray, rejected light gray
PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#aec7e8",
)
NOISE_COLOR = "#707070"
REJECTED_COLOR = "#c4c4c4"
KNOWN_COLOR = "#111111"


def write_embedding_csv(path, object_ids, points) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["object_id", "x", "y"])
        for oid, (x, y) in zip(object_ids, points):
            w.writerow([oid, repr(float(x)), repr(float(y))])


def write_clusters_csv(path, rows) -> None:
    """Rows of (object_id, x, y, cluster, role)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["object_id", "x", "y", "cluster", "role"])
        for oid, x, y, cluster, role in rows:
            w.writerow([oid, repr(float(x)), repr(float(y)), cluster, role])


def _color_for(cluster: int, role: str) -> str:
    if role == "rejected":
        return REJECTED_COLOR
    if cluster < 0:
        return NOISE_COLOR
    return PALETTE[cluster % len(PALETTE)]


def emit_scatter_svg(path, rows, known_refs=()) -> None:
    """Embedding scatter with cluster colors; valid SVG even when empty.

    ``rows`` are (object_id, x, y, cluster, role); ``known_refs`` are
    (class_id, x, y) drawn as small crosses.
    """
    size, margin = 480.0, 36.0
    xs = [r[1] for r in rows] + [k[1] for k in known_refs]
    ys = [r[2] for r in rows] + [k[2] for k in known_refs]
    if xs:
        x0, x1 = min(xs), max(xs)
        y0, y1 = min(ys), max(ys)
        span = max(x1 - x0, y1 - y0, 1e-9)
    else:
        x0 = y0 = 0.0
        span = 1.0
    scale = (size - 2 * margin) / span

    def sx(x):
        return margin + (x - x0) * scale

    def sy(y):
        return size - margin - (y - y0) * scale

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0f}" height="{size:.0f}" '
        f'viewBox="0 0 {size:.0f} {size:.0f}">',
        f'<rect width="{size:.0f}" height="{size:.0f}" fill="white"/>',
    ]
    for cls, x, y in known_refs:
        cx, cy = sx(x), sy(y)
        parts.append(
            f'<path d="M {cx - 3:.2f} {cy:.2f} H {cx + 3:.2f} M {cx:.2f} {cy - 3:.2f} '
            f'V {cy + 3:.2f}" stroke="{KNOWN_COLOR}" stroke-width="1" opacity="0.45"/>'
        )
    for oid, x, y, cluster, role in rows:
        color = _color_for(int(cluster), role)
        parts.append(
            f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="4" fill="{color}" '
            f'stroke="#333" stroke-width="0.4"><title>{oid}</title></circle>'
        )
    clusters_present = sorted({int(c) for _, _, _, c, role in rows if int(c) >= 0})
    legend_y = 16
    for cid in clusters_present:
        parts.append(
            f'<circle cx="14" cy="{legend_y}" r="4" fill="{PALETTE[cid % len(PALETTE)]}"/>'
            f'<text x="24" y="{legend_y + 4}" font-size="11" font-family="sans-serif">cluster {cid}</text>'
        )
        legend_y += 16
    if any(int(c) < 0 and role != "rejected" for _, _, _, c, role in rows):
        parts.append(
            f'<circle cx="14" cy="{legend_y}" r="4" fill="{NOISE_COLOR}"/>'
            f'<text x="24" y="{legend_y + 4}" font-size="11" font-family="sans-serif">noise</text>'
        )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def _savefig(fig, path) -> None:
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)


def plot_loss_trace(trace_csv, out_png) -> None:
    epochs, losses = [], []
    with open(trace_csv) as fh:
        next(fh)
        for line in fh:
            e, v = line.strip().split(",")
            epochs.append(int(e))
            losses.append(float(v))
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(epochs, losses, lw=1.4)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    fig.tight_layout()
    _savefig(fig, out_png)


def plot_iou_bars(report_json, out_png) -> None:
    with open(report_json) as fh:
        doc = json.load(fh)
    classes = sorted(doc["extended"]["per_class"], key=int)
    init = [doc["initial"]["per_class"].get(c, {"iou": 0.0})["iou"] for c in classes]
    ext = [doc["extended"]["per_class"][c]["iou"] for c in classes]
    x = np.arange(len(classes))
    fig, ax = plt.subplots(figsize=(5.6, 3.2))
    ax.bar(x - 0.18, init, width=0.36, label="initial")
    ax.bar(x + 0.18, ext, width=0.36, label="extended")
    ax.set_xticks(x)
    ax.set_xticklabels(classes)
    ax.set_xlabel("class id")
    ax.set_ylabel("IoU")
    ax.set_ylim(0, 1)
    ax.legend(frameon=False)
    fig.tight_layout()
    _savefig(fig, out_png)


def plot_quality_hist(scores_json, out_png) -> None:
    with open(scores_json) as fh:
        doc = json.load(fh)
    scores = [s for lst in doc.values() for s in lst]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist(scores, bins=25, range=(0, 1), color="#4878a8")
    ax.axvline(0.5, color="#a84848", lw=1, ls="--")
    ax.set_xlabel("segment quality score")
    ax.set_ylabel("segments")
    fig.tight_layout()
    _savefig(fig, out_png)


def emit_report(run_dir) -> str:
    """Collect run artifacts into ``<run_dir>/report`` with figures."""
    eval_csv = os.path.join(run_dir, "eval", "report.csv")
    eval_json = os.path.join(run_dir, "eval", "report.json")
    if not os.path.exists(eval_csv) or not os.path.exists(eval_json):
        raise StageMissingError("evaluation")
    out = os.path.join(run_dir, "report")
    figures = os.path.join(out, "figures")
    os.makedirs(figures, exist_ok=True)
    shutil.copyfile(eval_csv, os.path.join(out, "report.csv"))
    shutil.copyfile(eval_json, os.path.join(out, "report.json"))

    svg = os.path.join(run_dir, "clusters", "embedding.svg")
    if os.path.exists(svg):
        shutil.copyfile(svg, os.path.join(figures, "embedding.svg"))
    trace = os.path.join(run_dir, "models", "loss_trace.csv")
    if os.path.exists(trace):
        plot_loss_trace(trace, os.path.join(figures, "loss_trace.png"))
    plot_iou_bars(eval_json, os.path.join(figures, "iou_per_class.png"))
    scores = os.path.join(run_dir, "regressor", "scores.json")
    if os.path.exists(scores):
        plot_quality_hist(scores, os.path.join(figures, "quality_hist.png"))
    return out


def aggregate_reports(run_dirs, out_path) -> dict:
    """Mean and standard deviation of the headline numbers across seeds."""
    rows = []
    for rd in run_dirs:
        with open(os.path.join(rd, "eval", "report.json")) as fh:
            doc = json.load(fh)
        novel = doc["extended"].get("novel_ids", [])
        novel_iou = (
            float(np.mean([doc["extended"]["per_class"][str(c)]["iou"] for c in novel]))
            if novel
            else 0.0
        )
        rows.append(
            {
                "run": rd,
                "seed": doc["meta"]["seed"],
                "status": doc["meta"]["status"],
                "miou_known_initial": doc["initial"]["miou_known"],
                "miou_known_extended": doc["extended"]["miou_known"],
                "miou_all_extended": doc["extended"]["miou_all"],
                "novel_iou": novel_iou,
            }
        )
    keys = ("miou_known_initial", "miou_known_extended", "miou_all_extended", "novel_iou")
    agg = {
        k: {
            "mean": float(np.mean([r[k] for r in rows])),
            "std": float(np.std([r[k] for r in rows])),
        }
        for k in keys
    }
    doc = {"runs": rows, "aggregate": agg}
    with open(out_path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
    return doc
