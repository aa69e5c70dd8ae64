"""Toy segmentation head, extension by novel classes and incremental training.

The model is a frozen deterministic encoder (seeded random 3x3 convolution
bank through tanh, plus RGB passthrough and per-pixel coordinates) under a
trainable per-pixel affine decoder with softmax.  Training minimizes
``lam * weighted_ce + (1 - lam) * distill`` with manually derived
gradients (decoder only), Adam with decoupled weight decay, and a
polynomial learning-rate schedule.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, NumericError, SkipBatch
from .tensorio import read_tensor, write_tensor

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 70
    lr: float = 5e-5
    weight_decay: float = 1e-4
    lam: float = 0.5  # weight of the label loss; 1-lam scales distillation
    crop: tuple[int, int] = (64, 64)
    poly_power: float = 0.9
    batch_size: int = 4
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lam must lie in [0, 1]")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")


def poly_lr(base_lr: float, t: int, total: int, power: float = 0.9) -> float:
    """Polynomial decay after every iteration: lr * (1 - t/total)^power."""
    return base_lr * (1.0 - t / total) ** power


class ToySegmenter:
    """Frozen random-feature encoder + trainable per-pixel affine decoder."""

    def __init__(
        self,
        n_classes: int,
        encoder_seed: int = 0,
        n_filters: int = 11,
        decoder: tuple[np.ndarray, np.ndarray] | None = None,
        init_seed: int = 0,
    ):
        self.n_classes = n_classes
        self.encoder_seed = encoder_seed
        self.n_filters = n_filters
        self.filters = np.random.RandomState(encoder_seed).normal(
            0.0, 0.5, size=(n_filters, 27)
        )
        self.n_features = 5 + n_filters
        if decoder is not None:
            w, b = decoder
            if w.shape != (n_classes, self.n_features) or b.shape != (n_classes,):
                raise ConfigError("decoder shape mismatch")
            self.w = w.astype(np.float64).copy()
            self.b = b.astype(np.float64).copy()
        else:
            rng = np.random.RandomState(init_seed)
            self.w = rng.normal(0.0, 0.01, size=(n_classes, self.n_features))
            self.b = rng.normal(0.0, 0.01, size=n_classes)

    def features(self, image: np.ndarray) -> np.ndarray:
        """Deterministic (H, W, F) feature map; never touched by training."""
        img = np.asarray(image, dtype=np.float64) / 255.0
        h, w = img.shape[:2]
        rows = (np.arange(h) / max(h - 1, 1))[:, None] * np.ones((1, w))
        cols = np.ones((h, 1)) * (np.arange(w) / max(w - 1, 1))[None, :]
        padded = np.pad(img, ((1, 1), (1, 1), (0, 0)))
        shifted = np.empty((h, w, 9, 3))
        k = 0
        for dr in range(3):
            for dc in range(3):
                shifted[:, :, k, :] = padded[dr : dr + h, dc : dc + w, :]
                k += 1
        conv = np.tanh(shifted.reshape(h, w, 27) @ self.filters.T)
        return np.concatenate(
            [img, rows[:, :, None], cols[:, :, None], conv], axis=2
        )

    def probabilities_from_features(self, feats: np.ndarray) -> np.ndarray:
        logits = feats @ self.w.T + self.b
        logits -= logits.max(axis=-1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=-1, keepdims=True)

    def probabilities(self, image: np.ndarray) -> np.ndarray:
        return self.probabilities_from_features(self.features(image))

    def predict_mask(self, image: np.ndarray) -> np.ndarray:
        return (np.argmax(self.probabilities(image), axis=-1) + 1).astype(np.int32)

    def clone(self) -> "ToySegmenter":
        return ToySegmenter(
            self.n_classes,
            encoder_seed=self.encoder_seed,
            n_filters=self.n_filters,
            decoder=(self.w, self.b),
        )


def extend_model(f: ToySegmenter, n_new: int, seed: int = 0) -> ToySegmenter:
    """New head with ``n_new`` extra outputs; old rows copied verbatim."""
    rng = np.random.RandomState(seed)
    w_new = rng.normal(0.0, 0.01, size=(n_new, f.n_features))
    b_new = rng.normal(0.0, 0.01, size=n_new)
    return ToySegmenter(
        f.n_classes + n_new,
        encoder_seed=f.encoder_seed,
        n_filters=f.n_filters,
        decoder=(np.vstack([f.w, w_new]), np.concatenate([f.b, b_new])),
    )


def class_weights(labels: np.ndarray, n_classes: int) -> np.ndarray:
    """Inverse-frequency weights, mean 1 over classes present in the batch.

    Indexed by class id (entry 0 unused); absent classes get weight 0.
    Ignore pixels (-1) do not count.
    """
    flat = labels[labels > 0]
    if flat.size == 0:
        raise SkipBatch("batch holds no non-ignore pixel")
    counts = np.bincount(flat, minlength=n_classes + 1).astype(np.float64)
    present = counts > 0
    freq = counts / flat.size
    inv = np.zeros(n_classes + 1)
    inv[present] = 1.0 / freq[present]
    inv *= present.sum() / inv.sum()
    return inv


def weighted_ce(probs: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> float:
    """Class-weighted cross entropy over non-ignore pixels."""
    flat_p = probs.reshape(-1, probs.shape[-1])
    flat_y = labels.reshape(-1)
    valid = flat_y > 0
    if not valid.any():
        raise SkipBatch("no labeled pixel")
    py = flat_p[np.nonzero(valid)[0], flat_y[valid] - 1]
    py = np.maximum(py, PROB_FLOOR)
    return float(-(weights[flat_y[valid]] * np.log(py)).sum() / valid.sum())


def distill_loss(g_probs: np.ndarray, f_probs: np.ndarray) -> float:
    """Cross entropy of the extended head against the frozen soft targets.

    Summed over old classes only (new-class probabilities are not
    renormalized away) and averaged over every pixel.
    """
    n_old = f_probs.shape[-1]
    g_old = np.maximum(g_probs[..., :n_old], PROB_FLOOR)
    per_pixel = -(f_probs * np.log(g_old)).sum(axis=-1)
    return float(per_pixel.mean())


def total_loss(ce: float, d: float, lam: float) -> float:
    if not 0.0 <= lam <= 1.0:
        raise ConfigError("lam must lie in [0, 1]")
    return lam * ce + (1.0 - lam) * d


def batch_loss_and_grads(
    g: ToySegmenter,
    feats: np.ndarray,
    labels: np.ndarray,
    f_probs: np.ndarray | None,
    lam: float,
):
    """Loss of one flattened batch plus gradients w.r.t. decoder weights.

    ``feats`` is (N, F), ``labels`` (N,) with -1 ignores, ``f_probs``
    (N, C_old) soft targets or None to drop the distillation term.
    """
    logits = feats @ g.w.T + g.b
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    p = e / e.sum(axis=1, keepdims=True)
    n, n_cls = p.shape

    grad_logits = np.zeros_like(p)
    ce = 0.0
    if lam > 0.0:
        weights = class_weights(labels, n_cls)
        valid = np.nonzero(labels > 0)[0]
        y = labels[valid] - 1
        wy = weights[labels[valid]]
        py = np.maximum(p[valid, y], PROB_FLOOR)
        ce = float(-(wy * np.log(py)).sum() / valid.size)
        gce = p[valid] * wy[:, None]
        gce[np.arange(valid.size), y] -= wy
        grad_logits[valid] += (lam / valid.size) * gce

    d = 0.0
    if f_probs is not None and lam < 1.0:
        n_old = f_probs.shape[1]
        g_old = np.maximum(p[:, :n_old], PROB_FLOOR)
        d = float(-(f_probs * np.log(g_old)).sum(axis=1).mean())
        f_pad = np.zeros_like(p)
        f_pad[:, :n_old] = f_probs
        s_f = f_probs.sum(axis=1, keepdims=True)
        grad_logits += ((1.0 - lam) / n) * (p * s_f - f_pad)

    loss = lam * ce + (1.0 - lam) * d
    grad_w = grad_logits.T @ feats
    grad_b = grad_logits.sum(axis=0)
    return loss, grad_w, grad_b


@dataclass
class TrainSample:
    image_id: str
    features: np.ndarray  # (H, W, F) from the frozen encoder
    labels: np.ndarray  # (H, W) int32, -1 = ignore


def make_samples(model: ToySegmenter, items: list[tuple[str, np.ndarray, np.ndarray]]):
    """Encode images once; the encoder is frozen so features never change."""
    return [TrainSample(i, model.features(img), lab.astype(np.int32)) for i, img, lab in items]


def train(
    g: ToySegmenter,
    f: ToySegmenter | None,
    samples: list[TrainSample],
    cfg: TrainConfig,
) -> tuple[ToySegmenter, list[float]]:
    """Adam on the decoder only; returns the trained head and the loss trace.

    ``f`` provides frozen soft targets for distillation and must share the
    encoder with ``g``; pass None (or lam=1) for plain supervised fitting.
    """
    if not samples:
        raise ConfigError("no training samples")
    g = g.clone()
    rng = np.random.RandomState(cfg.seed)
    n = len(samples)
    batches_per_epoch = (n + cfg.batch_size - 1) // cfg.batch_size
    total_steps = max(cfg.epochs * batches_per_epoch, 1)

    m_w = np.zeros_like(g.w)
    v_w = np.zeros_like(g.w)
    m_b = np.zeros_like(g.b)
    v_b = np.zeros_like(g.b)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    adam_t = 0
    step = 0

    trace = []
    ch, cw = cfg.crop
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for bstart in range(0, n, cfg.batch_size):
            batch = order[bstart : bstart + cfg.batch_size]
            feat_list, label_list = [], []
            for si in batch:
                s = samples[si]
                h, w = s.labels.shape
                bh, bw = min(ch, h), min(cw, w)
                r0 = rng.randint(0, h - bh + 1)
                c0 = rng.randint(0, w - bw + 1)
                feat_list.append(s.features[r0 : r0 + bh, c0 : c0 + bw].reshape(-1, g.n_features))
                label_list.append(s.labels[r0 : r0 + bh, c0 : c0 + bw].reshape(-1))
            feats = np.concatenate(feat_list)
            labels = np.concatenate(label_list)
            f_probs = None
            if f is not None and cfg.lam < 1.0:
                f_logits = feats @ f.w.T + f.b
                f_logits -= f_logits.max(axis=1, keepdims=True)
                fe = np.exp(f_logits)
                f_probs = fe / fe.sum(axis=1, keepdims=True)
            try:
                loss, gw, gb = batch_loss_and_grads(g, feats, labels, f_probs, cfg.lam)
            except SkipBatch:
                step += 1
                continue
            if not np.isfinite(loss):
                raise NumericError(f"training diverged at step {step}: loss={loss}")

            lr_t = poly_lr(cfg.lr, step, total_steps, cfg.poly_power)
            adam_t += 1
            m_w = beta1 * m_w + (1 - beta1) * gw
            v_w = beta2 * v_w + (1 - beta2) * gw * gw
            m_b = beta1 * m_b + (1 - beta1) * gb
            v_b = beta2 * v_b + (1 - beta2) * gb * gb
            mhat_w = m_w / (1 - beta1**adam_t)
            vhat_w = v_w / (1 - beta2**adam_t)
            mhat_b = m_b / (1 - beta1**adam_t)
            vhat_b = v_b / (1 - beta2**adam_t)
            g.w -= lr_t * (mhat_w / (np.sqrt(vhat_w) + eps) + cfg.weight_decay * g.w)
            g.b -= lr_t * (mhat_b / (np.sqrt(vhat_b) + eps) + cfg.weight_decay * g.b)

            epoch_losses.append(loss)
            step += 1
        trace.append(float(np.mean(epoch_losses)) if epoch_losses else float("nan"))
    return g, trace


def train_initial(model: ToySegmenter, samples: list[TrainSample], cfg: TrainConfig):
    """Plain supervised fit of a fresh head (no distillation)."""
    return train(model, None, samples, replace(cfg, lam=1.0))


CHECKPOINT_VERSION = 1


def save_checkpoint(model: ToySegmenter, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    header = {
        "version": CHECKPOINT_VERSION,
        "n_classes": model.n_classes,
        "encoder_seed": model.encoder_seed,
        "n_filters": model.n_filters,
    }
    with open(os.path.join(out_dir, "header.json"), "w") as fh:
        json.dump(header, fh, sort_keys=True, indent=1)
    write_tensor(model.w.astype(np.float64), os.path.join(out_dir, "decoder_w.owt"))
    write_tensor(model.b.astype(np.float64), os.path.join(out_dir, "decoder_b.owt"))


def load_checkpoint(in_dir) -> ToySegmenter:
    with open(os.path.join(in_dir, "header.json")) as fh:
        header = json.load(fh)
    if header.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {header.get('version')}")
    w = read_tensor(os.path.join(in_dir, "decoder_w.owt"))
    b = read_tensor(os.path.join(in_dir, "decoder_b.owt"))
    return ToySegmenter(
        header["n_classes"],
        encoder_seed=header["encoder_seed"],
        n_filters=header["n_filters"],
        decoder=(w, b),
    )
