"""Class-wise IoU / precision / recall and means over the old and extended sets."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass
class ClassScores:
    iou: dict[int, float]
    precision: dict[int, float]
    recall: dict[int, float]


def confusion(preds, gts, n_classes: int) -> np.ndarray:
    """Accumulate an (n_classes, n_classes) matrix; rows = gt, cols = pred.

    Ground-truth ignore pixels (-1) are skipped entirely.
    """
    cm = np.zeros((n_classes, n_classes), dtype=np.uint64)
    for pred, gt in zip(preds, gts):
        pred = np.asarray(pred).reshape(-1)
        gt = np.asarray(gt).reshape(-1)
        valid = gt != -1
        p, g = pred[valid], gt[valid]
        if p.size == 0:
            continue
        if p.min() < 1 or p.max() > n_classes or g.min() < 1 or g.max() > n_classes:
            raise ValidationError("label outside [1, n_classes]")
        flat = (g - 1) * n_classes + (p - 1)
        cm += np.bincount(flat, minlength=n_classes * n_classes).reshape(
            n_classes, n_classes
        ).astype(np.uint64)
    return cm


def class_scores(cm: np.ndarray) -> ClassScores:
    """Per-class scores with zero-denominator cases mapped to 0."""
    cm = cm.astype(np.float64)
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp

    def safe(num, den):
        return np.where(den > 0, num / np.maximum(den, 1), 0.0)

    iou = safe(tp, tp + fp + fn)
    precision = safe(tp, tp + fp)
    recall = safe(tp, tp + fn)
    ids = range(1, cm.shape[0] + 1)
    return ClassScores(
        iou={c: float(iou[c - 1]) for c in ids},
        precision={c: float(precision[c - 1]) for c in ids},
        recall={c: float(recall[c - 1]) for c in ids},
    )


@dataclass
class Summary:
    per_class: dict[int, dict[str, float]]
    miou_known: float
    miou_all: float
    known_ids: list[int]
    novel_ids: list[int]

    def mean_over(self, ids, key) -> float:
        if not ids:
            return 0.0
        return float(np.mean([self.per_class[c][key] for c in ids]))


def summarize(scores: ClassScores, known_ids, novel_ids) -> Summary:
    """Unweighted class means over the old set and the extended set."""
    known_ids = sorted(known_ids)
    novel_ids = sorted(novel_ids)
    if set(known_ids) & set(novel_ids):
        raise ValidationError("known and novel id sets overlap")
    per_class = {
        c: {
            "iou": scores.iou[c],
            "precision": scores.precision[c],
            "recall": scores.recall[c],
        }
        for c in known_ids + novel_ids
    }
    miou_known = float(np.mean([scores.iou[c] for c in known_ids])) if known_ids else 0.0
    all_ids = known_ids + novel_ids
    miou_all = float(np.mean([scores.iou[c] for c in all_ids])) if all_ids else 0.0
    return Summary(
        per_class=per_class,
        miou_known=miou_known,
        miou_all=miou_all,
        known_ids=known_ids,
        novel_ids=novel_ids,
    )


def write_summary_csv(path, initial: Summary, extended: Summary, class_names=None):
    """Per-class table plus the two mean rows, initial vs extended columns."""
    class_names = class_names or {}
    ids = extended.known_ids + extended.novel_ids
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["class", "init_iou", "init_precision", "init_recall",
             "ext_iou", "ext_precision", "ext_recall"]
        )

        def row(label, a, b):
            w.writerow([label] + [f"{v:.6f}" for v in a] + [f"{v:.6f}" for v in b])

        for c in ids:
            init = initial.per_class.get(c, {"iou": 0.0, "precision": 0.0, "recall": 0.0})
            ext = extended.per_class[c]
            row(
                class_names.get(c, f"class_{c}"),
                (init["iou"], init["precision"], init["recall"]),
                (ext["iou"], ext["precision"], ext["recall"]),
            )
        for label, ids_ in (("mean_over_C", extended.known_ids), ("mean_over_C_plus", ids)):
            row(
                label,
                tuple(initial.mean_over([c for c in ids_ if c in initial.per_class], k)
                      for k in ("iou", "precision", "recall")),
                tuple(extended.mean_over(ids_, k) for k in ("iou", "precision", "recall")),
            )


def write_summary_json(path, initial: Summary, extended: Summary, meta: dict):
    doc = {
        "meta": meta,
        "initial": {
            "miou_known": initial.miou_known,
            "miou_all": initial.miou_all,
            "per_class": {str(k): v for k, v in initial.per_class.items()},
        },
        "extended": {
            "miou_known": extended.miou_known,
            "miou_all": extended.miou_all,
            "per_class": {str(k): v for k, v in extended.per_class.items()},
            "novel_ids": extended.novel_ids,
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
