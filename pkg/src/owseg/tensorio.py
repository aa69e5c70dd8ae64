"""Bit-exact tensor files (OWT1), PPM images and dataset sample loading.

OWT1 layout: magic ``OWT1`` (4 bytes), dtype code as u8 (1=u8, 2=i32,
3=f32, 4=f64), ndim as u8, ndim little-endian u64 extents, then the
row-major little-endian payload.  Total size is therefore exactly
``6 + 8*ndim + itemsize*prod(shape)``.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    FormatError,
    NotFoundError,
    ShapeError,
    SizeError,
    ValidationError,
)

MAGIC = b"OWT1"

# payload cap so a corrupt header cannot trigger a giant allocation
MAX_PAYLOAD_BYTES = 1 << 40

_DTYPE_OF_CODE = {
    1: np.dtype("<u1"),
    2: np.dtype("<i4"),
    3: np.dtype("<f4"),
    4: np.dtype("<f8"),
}
_CODE_OF_KIND = {
    np.dtype(np.uint8): 1,
    np.dtype(np.int32): 2,
    np.dtype(np.float32): 3,
    np.dtype(np.float64): 4,
}

SOFTMAX_SUM_TOL = 1e-4


def write_tensor(t: np.ndarray, path) -> None:
    """Write ``t`` to ``path`` in the OWT1 format (bit-exact round trip)."""
    t = np.asarray(t)
    dt = t.dtype.newbyteorder("=")
    if np.dtype(dt) not in _CODE_OF_KIND:
        raise SizeError(f"unsupported dtype {t.dtype}")
    if t.ndim == 0:
        raise SizeError("empty shape is forbidden")
    if t.ndim > 255:
        raise SizeError("too many dimensions")
    if any(d < 1 for d in t.shape):
        raise SizeError(f"shape entries must be >= 1, got {t.shape}")
    if t.size * t.itemsize > MAX_PAYLOAD_BYTES:
        raise SizeError("payload exceeds format limit")
    code = _CODE_OF_KIND[np.dtype(dt)]
    little = np.ascontiguousarray(t).astype(_DTYPE_OF_CODE[code], copy=False)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BB", code, t.ndim))
        fh.write(struct.pack(f"<{t.ndim}Q", *t.shape))
        fh.write(little.tobytes())


def read_tensor(path) -> np.ndarray:
    """Read an OWT1 file back into an array (native byte order)."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError:
        raise NotFoundError(f"no tensor file at {path}") from None
    if len(raw) < 6:
        raise FormatError("file shorter than OWT1 header")
    if raw[:4] != MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}")
    code, ndim = raw[4], raw[5]
    if code not in _DTYPE_OF_CODE:
        raise FormatError(f"unknown dtype code {code}")
    if ndim == 0:
        raise SizeError("empty shape is forbidden")
    header_end = 6 + 8 * ndim
    if len(raw) < header_end:
        raise FormatError("truncated dimension block")
    shape = struct.unpack(f"<{ndim}Q", raw[6:header_end])
    if any(d < 1 for d in shape):
        raise SizeError(f"shape entries must be >= 1, got {shape}")
    dtype = _DTYPE_OF_CODE[code]
    count = 1
    for d in shape:
        count *= d
    if count * dtype.itemsize > MAX_PAYLOAD_BYTES:
        raise SizeError("declared payload exceeds format limit")
    payload = raw[header_end:]
    if len(payload) != count * dtype.itemsize:
        raise FormatError(
            f"payload is {len(payload)} bytes, expected {count * dtype.itemsize}"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return arr.astype(dtype.newbyteorder("="), copy=True)


def write_ppm(img: np.ndarray, path) -> None:
    """Write an (H, W, 3) uint8 image as binary PPM (P6, maxval 255)."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ShapeError(f"PPM wants (H, W, 3) uint8, got {img.shape} {img.dtype}")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM (P6, 8-bit) into an (H, W, 3) uint8 array."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError:
        raise NotFoundError(f"no image file at {path}") from None
    if not raw.startswith(b"P6"):
        raise FormatError("not a P6 PPM file")

    # header: magic, width, height, maxval -- whitespace separated,
    # '#' starts a comment that runs to end of line
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            nl = raw.find(b"\n", pos)
            if nl < 0:
                raise FormatError("unterminated PPM comment")
            pos = nl + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PPM header")
        try:
            fields.append(int(raw[start:pos]))
        except ValueError:
            raise FormatError("non-numeric PPM header field") from None
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(f"only 8-bit PPM supported, maxval={maxval}")
    need = w * h * 3
    payload = raw[pos : pos + need]
    if len(payload) != need:
        raise FormatError("truncated PPM payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).copy()


@dataclass(frozen=True)
class Sample:
    """One dataset item: image, softmax output and optional ground truth."""

    id: str
    image: np.ndarray  # (H, W, 3) uint8
    softmax: np.ndarray  # (H, W, C), rows sum to 1
    gt: np.ndarray | None = None  # (H, W) int32, -1 = ignore


def validate_softmax(softmax: np.ndarray, tol: float = SOFTMAX_SUM_TOL) -> None:
    """Check shape, open-interval codomain and per-pixel normalization."""
    if softmax.ndim != 3:
        raise ShapeError(f"softmax must be (H, W, C), got {softmax.shape}")
    if not np.all(np.isfinite(softmax)):
        raise ValidationError("softmax contains non-finite values")
    if softmax.min() <= 0.0 or softmax.max() >= 1.0:
        raise ValidationError("softmax probabilities must lie strictly in (0, 1)")
    sums = softmax.sum(axis=2, dtype=np.float64)
    worst = np.abs(sums - 1.0).max()
    if worst > tol:
        raise ValidationError(f"softmax row sums off by {worst:.3g} (> {tol})")


def sample_paths(root, sample_id: str) -> dict[str, str]:
    return {
        "image": os.path.join(root, "images", f"{sample_id}.ppm"),
        "softmax": os.path.join(root, "softmax", f"{sample_id}.owt"),
        "gt": os.path.join(root, "gt", f"{sample_id}.owt"),
    }


def ensure_layout(root) -> None:
    """Create the dataset directory skeleton (images/softmax/gt/features)."""
    for sub in ("images", "softmax", "gt", "features"):
        os.makedirs(os.path.join(root, sub), exist_ok=True)


def load_sample(root, sample_id: str) -> Sample:
    """Load and validate one sample from the dataset layout.

    Ground truth is attached only when its file exists; it is never
    fabricated.
    """
    paths = sample_paths(root, sample_id)
    if not os.path.exists(paths["softmax"]):
        raise NotFoundError(f"no softmax tensor for sample '{sample_id}'")
    softmax = read_tensor(paths["softmax"])
    image = read_ppm(paths["image"])
    if softmax.ndim != 3:
        raise ShapeError(f"softmax must be (H, W, C), got {softmax.shape}")
    if image.shape[:2] != softmax.shape[:2]:
        raise ShapeError(
            f"image {image.shape[:2]} vs softmax {softmax.shape[:2]} for '{sample_id}'"
        )
    validate_softmax(softmax)
    gt = None
    if os.path.exists(paths["gt"]):
        gt = read_tensor(paths["gt"])
        if gt.shape != image.shape[:2]:
            raise ShapeError(f"gt {gt.shape} vs image {image.shape[:2]}")
        gt = gt.astype(np.int32, copy=False)
    return Sample(id=sample_id, image=image, softmax=softmax, gt=gt)


def list_ids(root, kind: str = "softmax") -> list[str]:
    """Sample ids present under ``<root>/<kind>/``, sorted for determinism."""
    d = os.path.join(root, kind)
    if not os.path.isdir(d):
        return []
    ext = ".ppm" if kind == "images" else ".owt"
    return sorted(f[: -len(ext)] for f in os.listdir(d) if f.endswith(ext))
