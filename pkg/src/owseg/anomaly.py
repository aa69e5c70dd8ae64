"""Anomaly mask thresholding, suspicious-object merging and filter heuristics."""

from __future__ import annotations

import json

import numpy as np

from .errors import SchemaError
from .segments import PixelObject, SegmentSet, merge_components


def anomaly_mask(segs: SegmentSet, scores: np.ndarray, tau: float) -> np.ndarray:
    """Binary mask flagging pixels whose segment score is strictly below tau."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (len(segs.segments),):
        raise SchemaError(
            f"{scores.shape[0] if scores.ndim else 0} scores for {len(segs.segments)} segments"
        )
    return (scores[segs.pixel_to_segment] < tau).astype(np.uint8)


def quality_map(segs: SegmentSet, scores: np.ndarray) -> np.ndarray:
    """Per-pixel quality estimate, constant on each segment."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (len(segs.segments),):
        raise SchemaError("score count does not match segment count")
    return scores[segs.pixel_to_segment]


def suspicious_objects(
    mask: np.ndarray,
    segs: SegmentSet,
    min_pixels: int = 50,
    source_image: str = "",
    connectivity: int = 8,
) -> list[PixelObject]:
    """Merge adjacent flagged segments into objects, dropping small blobs."""
    objects = merge_components(mask, min_pixels=min_pixels, connectivity=connectivity)
    sizes = {s.id: s.size for s in segs.segments}
    for obj in objects:
        members = np.unique(segs.pixel_to_segment[obj.pixels[:, 0], obj.pixels[:, 1]])
        obj.member_segments = [int(m) for m in members]
        obj.member_segment_sizes = [sizes[int(m)] for m in members]
        obj.source_image = source_image
    return objects


def single_segment_filter(
    objects: list[PixelObject], min_segment_pixels: int = 500
) -> list[PixelObject]:
    """Drop objects made of exactly one sufficiently large segment.

    Segments below ``min_segment_pixels`` do not count; an object whose
    big-segment count is anything other than one survives.
    """
    kept = []
    for obj in objects:
        big = sum(1 for s in obj.member_segment_sizes if s >= min_segment_pixels)
        if big != 1:
            kept.append(obj)
    return kept


def image_rejection(
    qmap: np.ndarray,
    mean_floor: float = 0.7,
    frac_ceiling: float = 1.0 / 3.0,
    pixel_floor: float = 0.9,
) -> bool:
    """True when the image is too badly predicted for pseudo-labeling."""
    q = np.asarray(qmap, dtype=np.float64)
    if q.mean() < mean_floor:
        return True
    return np.count_nonzero(q < pixel_floor) / q.size > frac_ceiling


def objects_to_json(objects: list[PixelObject], path) -> None:
    records = [
        {
            "id": o.id,
            "image": o.source_image,
            "bbox": list(o.bbox),
            "pixel_count": o.size,
            "member_segments": o.member_segments,
            "member_segment_sizes": o.member_segment_sizes,
            "pixels": o.pixels.tolist(),
        }
        for o in objects
    ]
    with open(path, "w") as fh:
        json.dump(records, fh, sort_keys=True, separators=(",", ":"))


def objects_from_json(path) -> list[PixelObject]:
    with open(path) as fh:
        records = json.load(fh)
    return [
        PixelObject(
            id=r["id"],
            pixels=np.array(r["pixels"], dtype=np.int32).reshape(-1, 2),
            bbox=tuple(r["bbox"]),
            member_segments=list(r["member_segments"]),
            member_segment_sizes=list(r["member_segment_sizes"]),
            source_image=r["image"],
        )
        for r in records
    ]
