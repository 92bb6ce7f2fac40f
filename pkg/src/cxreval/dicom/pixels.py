"""Pixel decoding and model-input preprocessing.

Preprocessing order: 8-bit quantization, zero-pad to a square, bilinear
resize to 1024x1024, replicate to 3 channels, per-channel normalization.

Tensor file layout (little endian)::

    bytes 0-3    magic b"CXRT"
    bytes 4-7    u32 height
    bytes 8-11   u32 width
    bytes 12-15  u32 channels
    bytes 16-    float32 values, row-major (height, width, channels)
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

from ..errors import DataError, DegenerateWindow, OutputError
from .parser import DicomObject

SIZE = 1024
MEAN = (123.675, 116.28, 103.53)
STD = (58.395, 57.12, 57.375)
TENSOR_MAGIC = b"CXRT"


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Grayscale image with samples in [0, 1], shape (height, width)."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 2 or s.shape[0] < 1 or s.shape[1] < 1:
            raise ValueError(f"image must be 2-D and non-empty, got shape {s.shape}")
        if not np.all((s >= 0.0) & (s <= 1.0)):
            raise ValueError("image samples must lie in [0, 1]")
        object.__setattr__(self, "samples", s)

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True, eq=False)
class PixelTensor:
    """Normalized (1024, 1024, 3) model input."""

    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (SIZE, SIZE, 3):
            raise ValueError(f"tensor must be {SIZE}x{SIZE}x3, got {self.values.shape}")

    @property
    def shape(self):
        return self.values.shape

    def denormalized(self) -> np.ndarray:
        return self.values * np.asarray(STD) + np.asarray(MEAN)


def _stored_values(obj: DicomObject) -> np.ndarray:
    d = obj.descriptor
    count = d.rows * d.columns
    raw = obj.pixel_data
    if d.bits_allocated == 8:
        v = np.frombuffer(raw, dtype="<u1", count=count).astype(np.int64)
    else:
        v = np.frombuffer(raw, dtype="<u2", count=count).astype(np.int64)
    v &= (1 << d.bits_stored) - 1
    if d.signed:
        sign = 1 << (d.bits_stored - 1)
        v = np.where(v & sign, v - (1 << d.bits_stored), v)
    return v.reshape(d.rows, d.columns)


def decode_pixels(obj: DicomObject) -> GrayImage:
    """Stored values -> rescale -> window (or min-max) -> [0, 1]; MONOCHROME1 inverted.

    Window: clamp to [c - w/2, c + w/2] then map linearly onto [0, 1]. A
    constant image under min-max scaling decodes to 0.5 everywhere.
    """
    d = obj.descriptor
    v = _stored_values(obj).astype(float) * d.rescale_slope + d.rescale_intercept
    if d.window_center is not None and d.window_width is not None:
        if d.window_width <= 0:
            raise DegenerateWindow(f"degenerate window: width {d.window_width}")
        lo = d.window_center - d.window_width / 2.0
        out = (np.clip(v, lo, lo + d.window_width) - lo) / d.window_width
    else:
        vmin, vmax = v.min(), v.max()
        out = np.full_like(v, 0.5) if vmax == vmin else (v - vmin) / (vmax - vmin)
    if d.photometric == "MONOCHROME1":
        out = 1.0 - out
    return GrayImage(np.clip(out, 0.0, 1.0))


def quantize(img: GrayImage) -> np.ndarray:
    """8-bit values, rounding halves up."""
    return np.clip(np.floor(img.samples * 255.0 + 0.5), 0, 255).astype(np.uint8)


def pad_square(a: np.ndarray) -> np.ndarray:
    """Zero-pad the short axis; an odd remainder goes to the bottom/right."""
    h, w = a.shape
    side = max(h, w)
    top, left = (side - h) // 2, (side - w) // 2
    out = np.zeros((side, side), dtype=a.dtype)
    out[top : top + h, left : left + w] = a
    return out


def _axis_weights(n_in: int, n_out: int):
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_bilinear(a: np.ndarray, height: int = SIZE, width: int = SIZE) -> np.ndarray:
    """Bilinear resize with half-pixel centers (align_corners=False), edge-clamped."""
    a = np.asarray(a, dtype=float)
    r0, r1, fr = _axis_weights(a.shape[0], height)
    c0, c1, fc = _axis_weights(a.shape[1], width)
    rows = a[r0] * (1.0 - fr)[:, None] + a[r1] * fr[:, None]
    return rows[:, c0] * (1.0 - fc)[None, :] + rows[:, c1] * fc[None, :]


def normalize(gray: np.ndarray) -> np.ndarray:
    stacked = np.repeat(gray[:, :, None], 3, axis=2)
    return (stacked - np.asarray(MEAN)) / np.asarray(STD)


def preprocess_stages(img: GrayImage) -> dict[str, np.ndarray]:
    """Every intermediate of :func:`preprocess`, for inspection and tests."""
    q = quantize(img)
    padded = pad_square(q)
    resized = resize_bilinear(padded)
    return {"quantized": q, "padded": padded, "resized": resized, "tensor": normalize(resized)}


def preprocess(img: GrayImage) -> PixelTensor:
    return PixelTensor(preprocess_stages(img)["tensor"])


# ---------------------------------------------------------------- files


def export_png(img: GrayImage, path) -> None:
    """Write an 8-bit grayscale PNG of the quantized image."""
    try:
        Image.fromarray(quantize(img), mode="L").save(path, format="PNG")
    except OSError as exc:
        raise OutputError(path, exc.strerror or exc) from exc


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


def tensor_bytes(t: PixelTensor) -> bytes:
    h, w, c = t.shape
    return struct.pack("<4sIII", TENSOR_MAGIC, h, w, c) + np.ascontiguousarray(t.values, dtype="<f4").tobytes()


def write_tensor(t: PixelTensor, path) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(tensor_bytes(t))
    except OSError as exc:
        raise OutputError(path, exc.strerror or exc) from exc


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 16 or buf[:4] != TENSOR_MAGIC:
        raise DataError("not a CXRT tensor file", path=os.fspath(path))
    _, h, w, c = struct.unpack_from("<4sIII", buf)
    expected = 16 + 4 * h * w * c
    if len(buf) != expected:
        raise DataError(f"tensor payload is {len(buf) - 16} bytes, expected {expected - 16}", path=os.fspath(path))
    return np.frombuffer(buf, dtype="<f4", offset=16).reshape(h, w, c)
