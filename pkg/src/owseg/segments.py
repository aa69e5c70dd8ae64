"""Decision rule, connected-component segments and suspicious-object merging.

A segment is a maximal connected component of pixels sharing one class in
the predicted label mask.  Boundary pixels have at least one neighbor
outside their segment; the image border counts as outside, so every
segment has a non-empty boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError

OFFSETS_8 = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
OFFSETS_4 = ((-1, 0), (0, -1), (0, 1), (1, 0))


def _offsets(connectivity: int):
    if connectivity == 8:
        return OFFSETS_8
    if connectivity == 4:
        return OFFSETS_4
    raise ConfigError(f"connectivity must be 4 or 8, got {connectivity}")


@dataclass(frozen=True)
class Segment:
    id: int
    class_id: int
    pixels: np.ndarray  # (n, 2) int32 (row, col), row-major order
    boundary: np.ndarray  # subset of pixels
    interior: np.ndarray  # complement subset
    bbox: tuple[int, int, int, int]  # (r0, c0, r1, c1), half-open

    @property
    def size(self) -> int:
        return len(self.pixels)


@dataclass(frozen=True)
class SegmentSet:
    segments: list[Segment]
    pixel_to_segment: np.ndarray  # (H, W) int32, z -> segment id
    adjacency: frozenset  # of (lo_id, hi_id) pairs

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixel_to_segment.shape

    def label_mask(self) -> np.ndarray:
        """Reconstruct the class-id mask the segments came from."""
        classes = np.array([s.class_id for s in self.segments], dtype=np.int32)
        return classes[self.pixel_to_segment]


@dataclass
class PixelObject:
    """Connected blob of flagged pixels, the footprint of a candidate novelty."""

    id: int
    pixels: np.ndarray  # (n, 2) int32
    bbox: tuple[int, int, int, int]
    member_segments: list[int] = field(default_factory=list)
    member_segment_sizes: list[int] = field(default_factory=list)
    source_image: str = ""

    @property
    def size(self) -> int:
        return len(self.pixels)


def argmax_mask(softmax: np.ndarray) -> np.ndarray:
    """Per-pixel argmax decision rule, 1-based class ids.

    Ties break to the lowest class index, so the mask is deterministic.
    """
    softmax = np.asarray(softmax)
    if softmax.ndim != 3 or softmax.shape[2] < 2:
        raise ConfigError(f"softmax must be (H, W, C) with C >= 2, got {softmax.shape}")
    if not np.all(np.isfinite(softmax)):
        raise NumericError("softmax contains non-finite probabilities")
    return (np.argmax(softmax, axis=2) + 1).astype(np.int32)


def label_components(values: np.ndarray, select: np.ndarray, connectivity: int = 8):
    """Label connected equal-value regions of ``values`` where ``select`` holds.

    Returns ``(labels, count)`` with labels dense 0..count-1 in row-major
    order of first visit and -1 outside ``select``.
    """
    offs = _offsets(connectivity)
    h, w = values.shape
    labels = np.full((h, w), -1, dtype=np.int32)
    count = 0
    for r0 in range(h):
        for c0 in range(w):
            if not select[r0, c0] or labels[r0, c0] >= 0:
                continue
            val = values[r0, c0]
            labels[r0, c0] = count
            stack = [(r0, c0)]
            while stack:
                r, c = stack.pop()
                for dr, dc in offs:
                    nr, nc = r + dr, c + dc
                    if 0 <= nr < h and 0 <= nc < w and labels[nr, nc] < 0:
                        if select[nr, nc] and values[nr, nc] == val:
                            labels[nr, nc] = count
                            stack.append((nr, nc))
            count += 1
    return labels, count


def outside_neighbor_mask(labels: np.ndarray, connectivity: int = 8) -> np.ndarray:
    """True where a pixel has any neighbor with a different label.

    The image border acts as a distinct label, so border pixels always
    qualify.
    """
    h, w = labels.shape
    padded = np.full((h + 2, w + 2), -2, dtype=labels.dtype)
    padded[1:-1, 1:-1] = labels
    out = np.zeros((h, w), dtype=bool)
    for dr, dc in _offsets(connectivity):
        out |= padded[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w] != labels
    return out


def connected_components(mask: np.ndarray, connectivity: int = 8) -> SegmentSet:
    """Split a label mask into maximal same-class components.

    Fills pixel-to-segment, the boundary/interior partition of every
    segment and the symmetric segment adjacency.
    """
    mask = np.asarray(mask)
    labels, count = label_components(mask, np.ones(mask.shape, dtype=bool), connectivity)
    is_boundary = outside_neighbor_mask(labels, connectivity)

    segments = []
    for sid in range(count):
        rr, cc = np.nonzero(labels == sid)
        pix = np.stack([rr, cc], axis=1).astype(np.int32)
        on_bd = is_boundary[rr, cc]
        segments.append(
            Segment(
                id=sid,
                class_id=int(mask[rr[0], cc[0]]),
                pixels=pix,
                boundary=pix[on_bd],
                interior=pix[~on_bd],
                bbox=(int(rr.min()), int(cc.min()), int(rr.max()) + 1, int(cc.max()) + 1),
            )
        )

    adjacency = set()
    h, w = mask.shape
    for dr, dc in _offsets(connectivity):
        r0s, r0e = max(0, -dr), min(h, h - dr)
        c0s, c0e = max(0, -dc), min(w, w - dc)
        a = labels[r0s:r0e, c0s:c0e]
        b = labels[r0s + dr : r0e + dr, c0s + dc : c0e + dc]
        diff = a != b
        for x, y in zip(a[diff].tolist(), b[diff].tolist()):
            adjacency.add((x, y) if x < y else (y, x))

    return SegmentSet(segments=segments, pixel_to_segment=labels, adjacency=frozenset(adjacency))


def merge_components(binary: np.ndarray, min_pixels: int = 1, connectivity: int = 8) -> list[PixelObject]:
    """Connected components of the 1-region, dropping blobs below ``min_pixels``."""
    binary = np.asarray(binary)
    labels, count = label_components(binary, binary != 0, connectivity)
    objects = []
    for sid in range(count):
        rr, cc = np.nonzero(labels == sid)
        if len(rr) < min_pixels:
            continue
        pix = np.stack([rr, cc], axis=1).astype(np.int32)
        objects.append(
            PixelObject(
                id=len(objects),
                pixels=pix,
                bbox=(int(rr.min()), int(cc.min()), int(rr.max()) + 1, int(cc.max()) + 1),
            )
        )
    return objects
