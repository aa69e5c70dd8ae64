"""Pixel-wise dispersion measures and the per-segment metric table.

Three dispersion maps are computed from the softmax output: normalized
entropy, probability margin (one minus the gap between the two largest
probabilities) and variation ratio (one minus the largest probability).
Per segment they are aggregated over the whole segment, its interior and
its boundary, joined by geometry and per-class statistics, producing
``32 + 2*C`` features per segment.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, PreconditionError, ValidationError
from .segments import SegmentSet, label_components, _offsets
from .tensorio import write_tensor


@dataclass(frozen=True)
class DispersionMaps:
    entropy: np.ndarray  # (H, W) float64 in [0, 1]
    margin: np.ndarray  # (H, W) float64 in [0, 1]
    varratio: np.ndarray  # (H, W) float64 in [0, 1]

    def stack(self) -> np.ndarray:
        return np.stack([self.entropy, self.margin, self.varratio])


@dataclass
class MetricTable:
    segment_ids: list[int]
    feature_names: list[str]
    rows: np.ndarray  # (n_segments, n_features) float64
    iou_targets: np.ndarray | None = None  # (n_segments,) float64 in [0, 1]

    def __post_init__(self):
        if not np.all(np.isfinite(self.rows)):
            raise ValidationError("metric rows contain NaN/Inf")

    @property
    def n_features(self) -> int:
        return self.rows.shape[1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            header = ["segment_id", *self.feature_names]
            if self.iou_targets is not None:
                header.append("iou")
            w.writerow(header)
            for i, sid in enumerate(self.segment_ids):
                row = [sid, *(repr(v) for v in self.rows[i].tolist())]
                if self.iou_targets is not None:
                    row.append(repr(float(self.iou_targets[i])))
                w.writerow(row)

    def save_owt(self, path) -> None:
        write_tensor(self.rows.astype(np.float64), path)


def stack_tables(tables: list[MetricTable]) -> MetricTable:
    """Concatenate per-image tables; feature names must agree exactly."""
    if not tables:
        raise PreconditionError("no tables to stack")
    names = tables[0].feature_names
    for t in tables[1:]:
        if t.feature_names != names:
            raise ValidationError("feature names differ between tables")
    has_targets = all(t.iou_targets is not None for t in tables)
    return MetricTable(
        segment_ids=[sid for t in tables for sid in t.segment_ids],
        feature_names=list(names),
        rows=np.concatenate([t.rows for t in tables], axis=0),
        iou_targets=(
            np.concatenate([t.iou_targets for t in tables]) if has_targets else None
        ),
    )


def pixel_dispersions(softmax: np.ndarray) -> DispersionMaps:
    """Entropy, margin and variation ratio per pixel (all in [0, 1])."""
    p = np.asarray(softmax, dtype=np.float64)
    if p.ndim != 3 or p.shape[2] < 2:
        raise ConfigError(f"need (H, W, C) softmax with C >= 2, got {p.shape}")
    c = p.shape[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0.0, p * np.log(p), 0.0)
    entropy = np.clip(-plogp.sum(axis=2) / np.log(c), 0.0, 1.0)
    part = np.partition(p, c - 2, axis=2)
    largest = part[:, :, -1]
    second = part[:, :, -2]
    margin = 1.0 - largest + second
    varratio = 1.0 - largest
    return DispersionMaps(entropy=entropy, margin=margin, varratio=varratio)


def feature_names(n_classes: int) -> list[str]:
    names = ["size", "size_interior", "size_boundary", "size_rel", "size_interior_rel"]
    for d in ("E", "M", "V"):
        names += [f"{d}_mean", f"{d}_mean_interior", f"{d}_mean_boundary"]
    for d in ("E", "M", "V"):
        names += [f"{d}_rel", f"{d}_rel_interior"]
    for d in ("E", "M", "V"):
        names += [f"{d}_var", f"{d}_var_interior", f"{d}_var_boundary"]
    names += ["pred_class", "center_row", "center_col"]
    names += [f"softmax_mean_c{c}" for c in range(1, n_classes + 1)]
    names += [f"neighbor_ratio_c{c}" for c in range(1, n_classes + 1)]
    return names


def _mean_var(values: np.ndarray) -> tuple[float, float]:
    # empty selections (interior of thin segments) aggregate to 0 so the
    # table stays NaN-free
    if values.size == 0:
        return 0.0, 0.0
    m = float(values.mean())
    return m, float(((values - m) ** 2).mean())


def segment_metrics(
    segs: SegmentSet, maps: DispersionMaps, softmax: np.ndarray, connectivity: int = 8
) -> MetricTable:
    """One feature row per segment, ordered as in :func:`feature_names`."""
    softmax = np.asarray(softmax, dtype=np.float64)
    n_classes = softmax.shape[2]
    mask = segs.label_mask()
    h, w = mask.shape
    offs = _offsets(connectivity)

    rows = np.zeros((len(segs.segments), 32 + 2 * n_classes), dtype=np.float64)
    for i, seg in enumerate(segs.segments):
        rr, cc = seg.pixels[:, 0], seg.pixels[:, 1]
        size = float(len(rr))
        size_in = float(len(seg.interior))
        size_bd = float(len(seg.boundary))
        feats = [size, size_in, size_bd, size / size_bd, size_in / size_bd]

        per_domain = []
        for dmap in (maps.entropy, maps.margin, maps.varratio):
            full = _mean_var(dmap[rr, cc])
            inner = _mean_var(dmap[seg.interior[:, 0], seg.interior[:, 1]])
            bound = _mean_var(dmap[seg.boundary[:, 0], seg.boundary[:, 1]])
            per_domain.append((full, inner, bound))
        for full, inner, bound in per_domain:
            feats += [full[0], inner[0], bound[0]]
        for full, inner, bound in per_domain:
            feats += [full[0] * size, inner[0] * (size_in / size_bd)]
        for full, inner, bound in per_domain:
            feats += [full[1], inner[1], bound[1]]

        feats += [float(seg.class_id), float(rr.mean()), float(cc.mean())]
        feats += softmax[rr, cc, :].mean(axis=0).tolist()

        # 1-pixel dilation ring around the segment
        ring = set()
        inside = set(map(tuple, seg.pixels.tolist()))
        for r, c in seg.boundary.tolist():
            for dr, dc in offs:
                nr, nc = r + dr, c + dc
                if 0 <= nr < h and 0 <= nc < w and (nr, nc) not in inside:
                    ring.add((nr, nc))
        ratios = np.zeros(n_classes, dtype=np.float64)
        if ring:
            ring_idx = np.array(sorted(ring), dtype=np.int32)
            ring_classes = mask[ring_idx[:, 0], ring_idx[:, 1]]
            counts = np.bincount(ring_classes, minlength=n_classes + 1)
            ratios = counts[1 : n_classes + 1] / float(len(ring))
        feats += ratios.tolist()

        rows[i] = feats

    return MetricTable(
        segment_ids=[s.id for s in segs.segments],
        feature_names=feature_names(n_classes),
        rows=rows,
    )


def segment_iou_targets(segs: SegmentSet, gt: np.ndarray | None, connectivity: int = 8) -> np.ndarray:
    """Localized IoU of every segment against ground truth.

    The union is restricted to ground-truth components of the segment's
    class that intersect the segment; ignore pixels (-1) take part in
    neither intersection nor union.
    """
    if gt is None:
        raise PreconditionError("ground truth required for IoU targets")
    gt = np.asarray(gt)
    if gt.shape != segs.shape:
        raise PreconditionError(f"gt {gt.shape} does not match segments {segs.shape}")

    out = np.zeros(len(segs.segments), dtype=np.float64)
    gt_labels_cache: dict[int, np.ndarray] = {}
    for i, seg in enumerate(segs.segments):
        c = seg.class_id
        if c not in gt_labels_cache:
            gt_labels_cache[c], _ = label_components(gt, gt == c, connectivity)
        comp = gt_labels_cache[c]
        rr, cc = seg.pixels[:, 0], seg.pixels[:, 1]
        touched = np.unique(comp[rr, cc])
        touched = touched[touched >= 0]
        valid = gt[rr, cc] != -1
        if touched.size == 0:
            out[i] = 0.0
            continue
        in_gt = np.isin(comp, touched)
        inter = int(np.count_nonzero(in_gt[rr, cc]))
        union = int(np.count_nonzero(in_gt)) + int(np.count_nonzero(valid & ~in_gt[rr, cc]))
        out[i] = inter / union if union else 0.0
    return out
