"""Synthetic open-world scenario generator.

Produces a dataset directory (images / softmax / gt / features) in which a
stand-in "initial model" output is fabricated directly: high-confidence,
nearly correct softmax on known shape classes, occasional degraded objects
(shifted or mislabeled, lower confidence, still coherent), and fragmented
low-confidence mixtures on the withheld novel shapes.  Ground truth
carries the novel ids only so that evaluation can score them later; the
pipeline itself never reads them for discovery.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError
from .tensorio import ensure_layout, write_ppm, write_tensor

KNOWN_SHAPES = ("background", "box", "disk")
NOVEL_SHAPES = ("cross", "ring")

COLORS = {
    "background": (105, 105, 105),
    "box": (200, 70, 60),
    "disk": (70, 185, 80),
    "cross": (225, 205, 55),
    "ring": (60, 120, 220),
}


@dataclass(frozen=True)
class ScenarioSpec:
    n_train: int = 60
    n_test: int = 40
    size: int = 64
    novel_kinds: tuple[str, ...] = ("cross",)
    objects_per_image: tuple[int, int] = (2, 4)
    novel_per_image: tuple[int, int] = (1, 2)
    object_extent: tuple[int, int] = (10, 18)
    novel_extent: tuple[int, int] = (14, 20)
    known_confidence: float = 0.99
    degrade_prob: float = 0.12
    degrade_confidence: tuple[float, float] = (0.52, 0.68)
    novel_confidence: tuple[float, float] = (0.42, 0.55)
    fragments: tuple[int, int] = (2, 3)
    noise_known: float = 0.04
    noise_novel: float = 0.12
    seed: int = 0

    @property
    def n_known(self) -> int:
        return len(KNOWN_SHAPES)

    def novel_ids(self) -> list[int]:
        return [self.n_known + 1 + i for i in range(len(self.novel_kinds))]


def _draw_box(rng, size, extent):
    h = rng.randint(extent[0], extent[1] + 1)
    w = rng.randint(extent[0], extent[1] + 1)
    r0 = rng.randint(1, size - h - 1)
    c0 = rng.randint(1, size - w - 1)
    m = np.zeros((size, size), dtype=bool)
    m[r0 : r0 + h, c0 : c0 + w] = True
    return m


def _draw_disk(rng, size, extent):
    rad = max(rng.randint(extent[0], extent[1] + 1) // 2, 2)
    r = rng.randint(rad + 1, size - rad - 1)
    c = rng.randint(rad + 1, size - rad - 1)
    rr, cc = np.ogrid[:size, :size]
    return (rr - r) ** 2 + (cc - c) ** 2 <= rad * rad


def _draw_cross(rng, size, extent):
    length = rng.randint(extent[0], extent[1] + 1)
    thick = max(length // 3, 3)
    r = rng.randint(1, size - length - 1)
    c = rng.randint(1, size - length - 1)
    m = np.zeros((size, size), dtype=bool)
    mid = length // 2 - thick // 2
    m[r + mid : r + mid + thick, c : c + length] = True
    m[r : r + length, c + mid : c + mid + thick] = True
    return m


def _draw_ring(rng, size, extent):
    rad = max(rng.randint(extent[0], extent[1] + 1) // 2, 4)
    r = rng.randint(rad + 1, size - rad - 1)
    c = rng.randint(rad + 1, size - rad - 1)
    rr, cc = np.ogrid[:size, :size]
    d2 = (rr - r) ** 2 + (cc - c) ** 2
    return (d2 <= rad * rad) & (d2 >= (rad * 0.45) ** 2)


_DRAWERS = {"box": _draw_box, "disk": _draw_disk, "cross": _draw_cross, "ring": _draw_ring}


def _dilate(mask, iterations=1):
    out = mask.copy()
    for _ in range(iterations):
        padded = np.pad(out, 1)
        grown = np.zeros_like(out)
        h, w = out.shape
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                grown |= padded[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w]
        out = grown
    return out


def _place_separated(rng, drawer, size, extent, occupied, gap, tries=40):
    """Draw a shape whose ``gap``-dilation avoids existing objects."""
    for _ in range(tries):
        m = drawer(rng, size, extent)
        if not (_dilate(m, gap) & occupied).any():
            return m
    return None


def _boundary_band(mask):
    """Pixels adjacent (8-way) to a class change in the prediction mask."""
    h, w = mask.shape
    padded = np.pad(mask, 1, mode="edge")
    band = np.zeros((h, w), dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == dc == 0:
                continue
            band |= padded[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w] != mask
    return band


def _fragment_prediction(rng, spec, m, n_known, pred, conf, noise_amp):
    """Shatter the prediction over mask ``m`` into low-confidence stripes.

    Stripes cycle over the non-background object classes, so the broken
    region never melts into the large background segment.
    """
    n_frag = rng.randint(spec.fragments[0], spec.fragments[1] + 1)
    rs, cs = np.nonzero(m)
    axis = rs if rng.rand() < 0.5 else cs
    lo_ax, hi_ax = axis.min(), axis.max() + 1
    cuts = np.linspace(lo_ax, hi_ax, n_frag + 1)
    frag_classes = 2 + rng.permutation(n_known - 1)
    for fi in range(n_frag):
        sel = (axis >= cuts[fi]) & (axis < cuts[fi + 1])
        pred[rs[sel], cs[sel]] = frag_classes[fi % (n_known - 1)]
    lo, hi = spec.novel_confidence
    conf[m] = rng.uniform(lo, hi, size=int(m.sum()))
    noise_amp[m] = spec.noise_novel


def _generate_image(spec: ScenarioSpec, rng, with_novel: bool):
    size = spec.size
    n_known = spec.n_known

    gt = np.ones((size, size), dtype=np.int32)  # background = class 1
    pred = np.ones((size, size), dtype=np.int32)
    conf = np.full((size, size), spec.known_confidence)
    conf += rng.uniform(-0.008, 0.008, size=conf.shape)
    noise_amp = np.full((size, size), spec.noise_known)
    img = np.empty((size, size, 3), dtype=np.float64)
    bg_color = np.array(COLORS["background"], dtype=np.float64) + rng.uniform(-8, 8, 3)
    img[:] = bg_color

    # known objects, occasionally degraded (trucks-and-trains analog);
    # objects keep a small gap so distinct things stay distinct segments
    occupied = np.zeros((size, size), dtype=bool)
    confused_region = np.zeros((size, size), dtype=bool)
    n_objects = rng.randint(spec.objects_per_image[0], spec.objects_per_image[1] + 1)
    for _ in range(n_objects):
        kind_id = rng.randint(1, n_known)  # 1 = box, 2 = disk (class = id + 1)
        kind = KNOWN_SHAPES[kind_id]
        class_id = kind_id + 1
        m = _place_separated(rng, _DRAWERS[kind], size, spec.object_extent, occupied, gap=2)
        if m is None:
            continue
        occupied |= m
        color = np.array(COLORS[kind], dtype=np.float64) + rng.uniform(-12, 12, 3)
        img[m] = color
        gt[m] = class_id

        if rng.rand() < spec.degrade_prob:
            lo, hi = spec.degrade_confidence
            c_deg = rng.uniform(lo, hi)
            mode = rng.rand()
            if mode < 0.35:
                # shifted footprint, correct class, low confidence
                dr, dc = rng.randint(-3, 4), rng.randint(-3, 4)
                shifted = np.zeros_like(m)
                rs, cs = np.nonzero(m)
                rs = np.clip(rs + dr, 0, size - 1)
                cs = np.clip(cs + dc, 0, size - 1)
                shifted[rs, cs] = True
                pred[shifted] = class_id
                conf[shifted] = c_deg
                noise_amp[shifted] = spec.noise_novel
            elif mode < 0.65:
                # whole object coherently mislabeled as the other known class
                wrong = 2 if class_id == 3 else 3
                pred[m] = wrong
                conf[m] = rng.uniform(0.6, 0.8)
                noise_amp[m] = spec.noise_novel
            else:
                # broken prediction: the in-distribution analog of how the
                # network falls apart on unknowns (trains the regressor to
                # map that signature to IoU near zero)
                _fragment_prediction(rng, spec, m, n_known, pred, conf, noise_amp)
                confused_region |= m
        else:
            pred[m] = class_id

    # novel objects: fragmented low-confidence mixtures over known classes
    novel_region = np.zeros((size, size), dtype=bool)
    if with_novel:
        n_novel = rng.randint(spec.novel_per_image[0], spec.novel_per_image[1] + 1)
        for _ in range(n_novel):
            kind_idx = rng.randint(0, len(spec.novel_kinds))
            kind = spec.novel_kinds[kind_idx]
            m = _place_separated(rng, _DRAWERS[kind], size, spec.novel_extent, occupied, gap=2)
            if m is None:
                continue
            occupied |= m
            color = np.array(COLORS[kind], dtype=np.float64) + rng.uniform(-12, 12, 3)
            img[m] = color
            gt[m] = n_known + 1 + kind_idx
            _fragment_prediction(rng, spec, m, n_known, pred, conf, noise_amp)
            novel_region |= m

    # soften prediction boundaries
    band = _boundary_band(pred)
    conf[band] = np.minimum(conf[band], rng.uniform(0.86, 0.94, size=int(band.sum())))

    # assemble the softmax: top class gets conf, runner-up most of the rest
    flat_pred = pred.reshape(-1) - 1
    flat_conf = conf.reshape(-1)
    n_pix = flat_pred.size
    second_share = rng.uniform(0.75, 0.92, size=n_pix)
    others = np.arange(n_known)
    softmax = np.empty((n_pix, n_known), dtype=np.float64)
    remaining = 1.0 - flat_conf
    for c in range(n_known):
        softmax[:, c] = 0.0
    # runner-up class: a different known class (cyclic); inside broken
    # regions the runner-up stays an object class so noise flips the
    # argmax between object classes, never into the background
    runner = (flat_pred + 1 + rng.randint(0, n_known - 1, size=n_pix)) % n_known
    flat_broken = (novel_region | confused_region).reshape(-1)
    if flat_broken.any():
        step = rng.randint(1, max(n_known - 1, 2), size=int(flat_broken.sum()))
        runner[flat_broken] = 1 + (flat_pred[flat_broken] - 1 + step) % (n_known - 1)
    softmax[np.arange(n_pix), flat_pred] = flat_conf
    softmax[np.arange(n_pix), runner] += remaining * second_share
    leftover = remaining * (1.0 - second_share)
    spread = np.ones((n_pix, n_known))
    spread[np.arange(n_pix), flat_pred] = 0.0
    spread[np.arange(n_pix), runner] = 0.0
    norm = spread.sum(axis=1)
    safe = norm > 0
    softmax[safe] += spread[safe] * (leftover[safe] / norm[safe])[:, None]
    softmax[~safe, flat_pred[~safe]] += leftover[~safe]

    # multiplicative jitter, then renormalize inside the open interval
    amp = noise_amp.reshape(-1, 1)
    softmax *= np.exp(amp * rng.standard_normal(softmax.shape))
    softmax = np.clip(softmax, 1e-6, None)
    softmax /= softmax.sum(axis=1, keepdims=True)
    softmax = softmax.reshape(spec.size, spec.size, n_known)

    image_u8 = np.clip(img + rng.uniform(-10, 10, img.shape), 0, 255).astype(np.uint8)
    return image_u8, softmax.astype(np.float32), gt


def gen_synthetic(spec: ScenarioSpec, out_dir) -> dict:
    """Write the dataset and its manifest; byte-identical for a fixed seed."""
    if not spec.novel_kinds:
        raise ConfigError("scenario needs at least one novel class")
    for kind in spec.novel_kinds:
        if kind not in NOVEL_SHAPES:
            raise ConfigError(f"unknown novel shape '{kind}'")

    ensure_layout(out_dir)
    master = np.random.RandomState(spec.seed)
    child_seeds = master.randint(0, 2**31 - 1, size=spec.n_train + spec.n_test)

    train_ids, test_ids = [], []
    for i in range(spec.n_train + spec.n_test):
        is_test = i >= spec.n_train
        sample_id = f"{'test' if is_test else 'train'}_{i - spec.n_train if is_test else i:04d}"
        rng = np.random.RandomState(child_seeds[i])
        image, softmax, gt = _generate_image(spec, rng, with_novel=is_test)
        write_ppm(image, os.path.join(out_dir, "images", f"{sample_id}.ppm"))
        write_tensor(softmax, os.path.join(out_dir, "softmax", f"{sample_id}.owt"))
        write_tensor(gt, os.path.join(out_dir, "gt", f"{sample_id}.owt"))
        (test_ids if is_test else train_ids).append(sample_id)

    class_names = {i + 1: name for i, name in enumerate(KNOWN_SHAPES)}
    for i, kind in enumerate(spec.novel_kinds):
        class_names[spec.n_known + 1 + i] = kind
    spec_doc = {
        k: list(v) if isinstance(v, tuple) else v for k, v in asdict(spec).items()
    }
    manifest = {
        "spec": spec_doc,
        "n_known": spec.n_known,
        "novel_ids": spec.novel_ids(),
        "class_names": {str(k): v for k, v in class_names.items()},
        "train_ids": train_ids,
        "test_ids": test_ids,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
    return manifest


def load_manifest(root) -> dict:
    with open(os.path.join(root, "manifest.json")) as fh:
        return json.load(fh)
