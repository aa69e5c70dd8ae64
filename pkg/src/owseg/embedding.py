"""Patch extraction, feature descriptors and the PCA + t-SNE reduction chain.

The 2-D embedding is produced by projecting patch features onto the top
principal components and running exact t-SNE (Student-t low-dimensional
affinities, per-point Gaussian bandwidths found by bisection against the
target perplexity, plain momentum gradient descent with early
exaggeration).  Everything is deterministic given the seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, PreconditionError
from .segments import PixelObject


@dataclass(frozen=True)
class Patch:
    object_id: int
    image_id: str
    bbox: tuple[int, int, int, int]  # (r0, c0, r1, c1), half-open
    rgb: np.ndarray  # (h, w, 3) uint8 crop

    @property
    def height(self) -> int:
        return self.bbox[2] - self.bbox[0]

    @property
    def width(self) -> int:
        return self.bbox[3] - self.bbox[1]


@dataclass(frozen=True)
class Embedding2D:
    points: np.ndarray  # (n, 2) float64
    refs: list  # parallel identifiers (object ids or reference tags)


def extract_patches(
    image: np.ndarray, objects: list[PixelObject], min_patch: int = 64
) -> list[Patch]:
    """Tight bounding-box crops of the objects, skipping undersized ones."""
    h, w = image.shape[:2]
    patches = []
    for obj in objects:
        r0, c0, r1, c1 = obj.bbox
        r0, c0 = max(0, r0), max(0, c0)
        r1, c1 = min(h, r1), min(w, c1)
        if r1 - r0 < min_patch or c1 - c0 < min_patch:
            continue
        patches.append(
            Patch(
                object_id=obj.id,
                image_id=obj.source_image,
                bbox=(r0, c0, r1, c1),
                rgb=np.ascontiguousarray(image[r0:r1, c0:c1]),
            )
        )
    return patches


def fallback_features(rgb: np.ndarray) -> np.ndarray:
    """Resolution-independent 8x8x8 joint color histogram (512 bins, L1 = 1).

    Stand-in descriptor so the pipeline runs without an external feature
    extractor; externally computed features take precedence when present.
    """
    rgb = np.asarray(rgb)
    if rgb.size == 0:
        raise PreconditionError("empty patch")
    bins = (rgb.reshape(-1, 3) >> 5).astype(np.int64)  # 256/8 = 32 per bin
    idx = (bins[:, 0] * 8 + bins[:, 1]) * 8 + bins[:, 2]
    hist = np.bincount(idx, minlength=512).astype(np.float64)
    return hist / hist.sum()


def pca(X: np.ndarray, k: int = 50, return_basis: bool = False):
    """Project mean-centered rows onto the top-k right singular vectors.

    Deterministic sign convention: the first nonzero coefficient of every
    component is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if n < 2:
        raise DataError("need at least 2 rows for PCA")
    if not 1 <= k <= min(n - 1, d):
        raise ConfigError(f"k={k} outside [1, min(n-1={n - 1}, d={d})]")
    center = X - X.mean(axis=0)
    u, s, vt = np.linalg.svd(center, full_matrices=False)
    for i in range(vt.shape[0]):
        nz = np.nonzero(vt[i])[0]
        if nz.size and vt[i, nz[0]] < 0:
            vt[i] = -vt[i]
            u[:, i] = -u[:, i]
    proj = u[:, :k] * s[:k]
    if return_basis:
        return proj, vt[:k]
    return proj


def _bandwidths(d2: np.ndarray, perplexity: float, tol: float = 1e-5, max_iter: int = 50):
    """Per-point conditional probabilities whose entropy matches log(perplexity)."""
    n = d2.shape[0]
    target = np.log(perplexity)
    P = np.zeros((n, n), dtype=np.float64)
    all_idx = np.arange(n)
    for i in range(n):
        others = all_idx != i
        row = d2[i, others]
        beta, beta_lo, beta_hi = 1.0, -np.inf, np.inf
        p = np.exp(-row * beta)
        for _ in range(max_iter):
            p = np.exp(-row * beta)
            sum_p = p.sum()
            if sum_p > 0:
                h = np.log(sum_p) + beta * float(row @ p) / sum_p
            else:
                h = -np.inf  # bandwidth collapsed, widen it
            diff = h - target
            if abs(diff) < tol:
                break
            if diff > 0:
                beta_lo = beta
                beta = beta * 2.0 if np.isinf(beta_hi) else 0.5 * (beta + beta_hi)
            else:
                beta_hi = beta
                beta = beta / 2.0 if np.isinf(beta_lo) else 0.5 * (beta + beta_lo)
        P[i, others] = p / p.sum()
    return P


def _q_matrix(Y: np.ndarray):
    d2 = ((Y[:, None, :] - Y[None, :, :]) ** 2).sum(axis=2)
    num = 1.0 / (1.0 + d2)
    np.fill_diagonal(num, 0.0)
    return num / num.sum(), num


def kl_divergence(Y: np.ndarray, P: np.ndarray) -> float:
    Q, _ = _q_matrix(Y)
    mask = P > 0
    return float((P[mask] * np.log(P[mask] / Q[mask])).sum())


def kl_gradient(Y: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Analytic gradient of the KL divergence w.r.t. the 2-D coordinates."""
    Q, num = _q_matrix(Y)
    W = (P - Q) * num
    return 4.0 * (np.diag(W.sum(axis=1)) @ Y - W @ Y)


def joint_probabilities(X: np.ndarray, perplexity: float) -> np.ndarray:
    d2 = ((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2)
    cond = _bandwidths(d2, perplexity)
    return (cond + cond.T) / (2.0 * X.shape[0])


def tsne(
    X: np.ndarray,
    perplexity: float = 30.0,
    iters: int = 1000,
    seed: int = 0,
    learning_rate: float = 200.0,
    early_exaggeration: float = 12.0,
    early_iters: int = 250,
    return_trace: bool = False,
):
    """Embed rows of ``X`` into 2-D; optionally also return the KL trace."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 5:
        raise ConfigError(f"t-SNE needs at least 5 points, got {n}")
    if not 0 < perplexity < n:
        raise ConfigError(f"perplexity must lie in (0, n={n})")

    P = joint_probabilities(X, perplexity)
    rng = np.random.RandomState(seed)
    Y = rng.normal(scale=1e-4, size=(n, 2))
    vel = np.zeros_like(Y)
    gains = np.ones_like(Y)
    trace = []
    for t in range(iters):
        if t == early_iters:
            # exploration ends: fresh optimizer state for the main phase
            vel = np.zeros_like(Y)
            gains = np.ones_like(Y)
        P_eff = P * early_exaggeration if t < early_iters else P
        grad = kl_gradient(Y, P_eff)
        momentum = 0.5 if t < early_iters else 0.8
        # adaptive per-coordinate gains keep lr 200 stable
        agree = (grad > 0) == (vel > 0)
        gains = np.where(agree, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        vel = momentum * vel - learning_rate * (gains * grad)
        Y = Y + vel
        if return_trace:
            trace.append(kl_divergence(Y, P))
    if return_trace:
        return Y, np.array(trace)
    return Y
