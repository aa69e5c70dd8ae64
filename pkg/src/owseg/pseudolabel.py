"""Pseudo ground truth for clustered novelties and rehearsal-set selection.

Pixels of clustered suspicious objects get the next free class id
(C+1, C+2, ... in cluster-size order); everything else keeps the initial
prediction, or becomes ignore (-1) in the experiment mode that blanks all
known classes.  The rehearsal set replays old training images chosen
under per-class presence quotas.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NotIncluded
from .segments import PixelObject

log = logging.getLogger(__name__)

IGNORE = -1


@dataclass
class PseudoSample:
    image_id: str
    labels: np.ndarray  # (H, W) int32 over {-1} u {1..C+n_novel}
    novel_pixel_count: dict[int, int] = field(default_factory=dict)


def pseudo_label(
    mask: np.ndarray,
    objects_per_cluster: list[list[PixelObject]],
    n_known: int,
    ignore_known: bool = False,
    image_id: str = "",
) -> PseudoSample:
    """Relabel clustered object pixels with fresh novel ids.

    ``objects_per_cluster`` holds this image's objects, one list per
    selected cluster, biggest cluster first.  Raises :class:`NotIncluded`
    when no cluster touches the image, in which case the image does not
    enter the retraining set.
    """
    if not any(objects_per_cluster):
        raise NotIncluded(f"no clustered novel segment in image '{image_id}'")
    mask = np.asarray(mask, dtype=np.int32)
    if ignore_known:
        labels = np.full(mask.shape, IGNORE, dtype=np.int32)
    else:
        labels = mask.copy()
    counts: dict[int, int] = {}
    for ci, objects in enumerate(objects_per_cluster):
        novel_id = n_known + 1 + ci
        n_pix = 0
        for obj in objects:
            labels[obj.pixels[:, 0], obj.pixels[:, 1]] = novel_id
            n_pix += obj.size
        counts[novel_id] = n_pix
    return PseudoSample(image_id=image_id, labels=labels, novel_pixel_count=counts)


def related_class_histogram(
    pseudo_samples: list[PseudoSample],
    masks: dict[str, np.ndarray],
    novel_id: int,
) -> dict[int, int]:
    """Count initial-prediction classes under the pixels of one novel id."""
    counts: dict[int, int] = {}
    for ps in pseudo_samples:
        mask = masks[ps.image_id]
        under = mask[ps.labels == novel_id]
        for cls, cnt in zip(*np.unique(under, return_counts=True)):
            counts[int(cls)] = counts.get(int(cls), 0) + int(cnt)
    return counts


def top_related_classes(histogram: dict[int, int], top_m: int = 3) -> list[int]:
    ranked = sorted(histogram.items(), key=lambda kv: (-kv[1], kv[0]))
    return [cls for cls, cnt in ranked[:top_m] if cnt > 0]


def select_rehearsal(
    train_index: dict[str, set[int]],
    histogram: dict[int, int],
    n: int,
    rare_share: float = 0.0,
    related_share: float = 0.3,
    seed: int = 0,
    quotas: dict[int, float] | None = None,
    top_m: int = 3,
) -> list[str]:
    """Pick ``n`` old-training images under class-presence quotas.

    Quotas come from explicit config when given, otherwise the top
    ``top_m`` histogram classes get ``related_share`` and classes never
    predicted under novel pixels get ``rare_share``.  Infeasible quotas
    degrade to a best-effort fill with a warning; the remainder is
    uniform random under the seed.
    """
    ids = sorted(train_index)
    if n >= len(ids):
        if n > len(ids):
            log.warning("rehearsal size %d exceeds corpus (%d); using all", n, len(ids))
        return ids

    if quotas is None:
        quotas = {}
        universe = sorted(set().union(*train_index.values())) if train_index else []
        if rare_share > 0:
            for cls in universe:
                if histogram.get(cls, 0) == 0:
                    quotas[cls] = rare_share
        for cls in top_related_classes(histogram, top_m):
            quotas[cls] = related_share

    rng = np.random.RandomState(seed)
    pool = [ids[i] for i in rng.permutation(len(ids))]
    selected: list[str] = []
    chosen = set()

    # largest quotas first so competing constraints get the best shot
    for cls, share in sorted(quotas.items(), key=lambda kv: (-kv[1], kv[0])):
        need = int(np.ceil(share * n)) - sum(1 for s in selected if cls in train_index[s])
        for img in pool:
            if need <= 0 or len(selected) >= n:
                break
            if img not in chosen and cls in train_index[img]:
                selected.append(img)
                chosen.add(img)
                need -= 1
        if need > 0:
            log.warning("quota for class %d unmet by %d images", cls, need)

    for img in pool:
        if len(selected) >= n:
            break
        if img not in chosen:
            selected.append(img)
            chosen.add(img)
    return selected


@dataclass
class RetrainManifest:
    novel_ids: list[int]
    pseudo_images: list[str]
    rehearsal_images: list[str]
    quotas: dict[int, float]
    seed: int
    histograms: dict[int, dict[int, int]] = field(default_factory=dict)

    def save(self, path) -> None:
        doc = {
            "novel_ids": self.novel_ids,
            "pseudo_images": self.pseudo_images,
            "rehearsal_images": self.rehearsal_images,
            "quotas": {str(k): v for k, v in self.quotas.items()},
            "seed": self.seed,
            "histograms": {
                str(nid): {str(c): n for c, n in h.items()}
                for nid, h in self.histograms.items()
            },
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)

    @classmethod
    def load(cls, path) -> "RetrainManifest":
        with open(path) as fh:
            doc = json.load(fh)
        return cls(
            novel_ids=list(doc["novel_ids"]),
            pseudo_images=list(doc["pseudo_images"]),
            rehearsal_images=list(doc["rehearsal_images"]),
            quotas={int(k): v for k, v in doc["quotas"].items()},
            seed=doc["seed"],
            histograms={
                int(nid): {int(c): n for c, n in h.items()}
                for nid, h in doc.get("histograms", {}).items()
            },
        )
