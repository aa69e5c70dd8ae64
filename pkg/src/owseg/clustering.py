"""DBSCAN over the 2-D embedding plus novel-cluster selection heuristics.

Neighborhoods are closed balls and a point counts itself, so a core point
is one whose epsilon-ball holds at least ``n_min`` points including
itself.  Expansion runs in index order, making border-point assignment
deterministic; downstream steps only ever use core points.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

NOISE = -1


@dataclass
class DbscanResult:
    labels: np.ndarray  # (n,) int32, -1 = noise
    role: np.ndarray  # (n,) unicode: core / border / noise
    epsilon: float
    n_min: int

    def cluster_ids(self) -> list[int]:
        ids = np.unique(self.labels)
        return [int(i) for i in ids if i >= 0]

    def core_count(self, cluster_id: int) -> int:
        return int(np.count_nonzero((self.labels == cluster_id) & (self.role == "core")))


def dbscan(points: np.ndarray, epsilon: float, n_min: int) -> DbscanResult:
    points = np.asarray(points, dtype=np.float64)
    if epsilon <= 0:
        raise ConfigError("epsilon must be positive")
    if n_min < 1:
        raise ConfigError("n_min must be >= 1")
    n = points.shape[0]
    labels = np.full(n, NOISE, dtype=np.int32)
    role = np.full(n, "noise", dtype="<U6")
    if n == 0:
        return DbscanResult(labels, role, epsilon, n_min)

    d2 = ((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
    within = d2 <= epsilon * epsilon
    neighbor_lists = [np.nonzero(within[i])[0] for i in range(n)]
    core = np.array([len(nb) >= n_min for nb in neighbor_lists])
    role[core] = "core"

    next_id = 0
    for i in range(n):
        if not core[i] or labels[i] != NOISE:
            continue
        labels[i] = next_id
        queue = deque([i])
        while queue:
            u = queue.popleft()
            for v in neighbor_lists[u]:
                if labels[v] == NOISE:
                    labels[v] = next_id
                    if core[v]:
                        queue.append(v)
        next_id += 1

    border = (labels != NOISE) & ~core
    role[border] = "border"
    return DbscanResult(labels, role, epsilon, n_min)


def select_novel_clusters(result: DbscanResult, min_core_points: int = 10) -> list[int]:
    """Cluster ids that hold enough core points, biggest first.

    If no cluster reaches the threshold but clusters exist, the single
    largest one is still returned; an empty result means no novelty.
    """
    ids = result.cluster_ids()
    if not ids:
        return []
    ranked = sorted(ids, key=lambda cid: (-result.core_count(cid), cid))
    chosen = [cid for cid in ranked if result.core_count(cid) >= min_core_points]
    return chosen if chosen else [ranked[0]]


def reject_known(
    points: np.ndarray,
    known_points: np.ndarray,
    known_classes: np.ndarray,
    radius: float = 2.75,
    min_neighbors: int = 10,
    majority: float = 0.8,
) -> np.ndarray:
    """Keep-mask over candidates; False marks a likely known-class object.

    A candidate is rejected when its radius-ball contains at least
    ``min_neighbors`` known embeddings of which the most frequent class
    has a share of at least ``majority``.
    """
    points = np.asarray(points, dtype=np.float64)
    known_points = np.asarray(known_points, dtype=np.float64)
    known_classes = np.asarray(known_classes)
    keep = np.ones(points.shape[0], dtype=bool)
    if known_points.size == 0:
        return keep
    for i in range(points.shape[0]):
        d2 = ((known_points - points[i]) ** 2).sum(axis=1)
        nb = known_classes[d2 <= radius * radius]
        if nb.size < min_neighbors:
            continue
        _, counts = np.unique(nb, return_counts=True)
        if counts.max() / nb.size >= majority:
            keep[i] = False
    return keep
