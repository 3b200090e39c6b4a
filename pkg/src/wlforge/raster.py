"""Raster value types, binarization, coverage, resizing, and PNG I/O.

Conventions (fixed for reproducibility):
  - images load from 8-bit grayscale or 24-bit color PNG; color collapses to
    luminance with weights 0.299/0.587/0.114
  - binary masks persist as 8-bit grayscale PNG with exactly {0, 255}
  - probability maps persist as 16-bit grayscale PNG, probability = value/65535
  - binarization is p >= tau -> foreground
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .audit import audit
from .errors import RasterIOError

_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)
PROB_SCALE = 65535


def _check_unit_interval(arr: np.ndarray, what: str) -> None:
    if arr.size == 0 or arr.ndim != 2:
        raise ValueError(f"{what} must be a non-empty 2-D array")
    if np.min(arr) < 0.0 or np.max(arr) > 1.0:
        raise ValueError(f"{what} values must lie in [0, 1]")


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Grayscale image; `pixels` is float64, shape (height, width), in [0,1]."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.pixels, dtype=np.float64)
        _check_unit_interval(arr, "image")
        object.__setattr__(self, "pixels", _freeze(arr))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True, eq=False)
class ProbMask:
    """Per-pixel foreground probability; float64, shape (height, width)."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.probs, dtype=np.float64)
        _check_unit_interval(arr, "probability mask")
        object.__setattr__(self, "probs", _freeze(arr))

    @property
    def height(self) -> int:
        return self.probs.shape[0]

    @property
    def width(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True, eq=False)
class BinMask:
    """Binary mask; bool, shape (height, width)."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.bits, dtype=bool)
        if arr.size == 0 or arr.ndim != 2:
            raise ValueError("mask must be a non-empty 2-D array")
        object.__setattr__(self, "bits", _freeze(arr))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]


def binarize(p: ProbMask, tau: float) -> BinMask:
    """Threshold a probability mask; foreground iff prob >= tau."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    return BinMask(p.probs >= tau)


def coverage(m: BinMask) -> float:
    """Fraction of pixels that are foreground."""
    return int(np.count_nonzero(m.bits)) / m.bits.size


def foreground_count(m: BinMask) -> int:
    return int(np.count_nonzero(m.bits))


def _resize_grid(src_len: int, dst_len: int) -> np.ndarray:
    # half-pixel-center mapping: dst center i+0.5 maps to src coord
    return (np.arange(dst_len, dtype=np.float64) + 0.5) * (src_len / dst_len) - 0.5


def resize_image(img: GrayImage, w: int, h: int) -> GrayImage:
    """Bilinear resize with half-pixel-center sampling, edges replicated."""
    if w < 1 or h < 1:
        raise ValueError("target dimensions must be >= 1")
    src = img.pixels
    if (h, w) == src.shape:
        return GrayImage(src.copy())
    rows = _resize_grid(src.shape[0], h)
    cols = _resize_grid(src.shape[1], w)
    r0 = np.clip(np.floor(rows), 0, src.shape[0] - 1).astype(np.int64)
    c0 = np.clip(np.floor(cols), 0, src.shape[1] - 1).astype(np.int64)
    r1 = np.minimum(r0 + 1, src.shape[0] - 1)
    c1 = np.minimum(c0 + 1, src.shape[1] - 1)
    fr = np.clip(rows - r0, 0.0, 1.0)[:, None]
    fc = np.clip(cols - c0, 0.0, 1.0)[None, :]
    top = src[np.ix_(r0, c0)] * (1 - fc) + src[np.ix_(r0, c1)] * fc
    bot = src[np.ix_(r1, c0)] * (1 - fc) + src[np.ix_(r1, c1)] * fc
    return GrayImage(np.clip(top * (1 - fr) + bot * fr, 0.0, 1.0))


def resize_mask(m: BinMask, w: int, h: int) -> BinMask:
    """Nearest-neighbor resize with half-pixel-center sampling."""
    if w < 1 or h < 1:
        raise ValueError("target dimensions must be >= 1")
    src = m.bits
    if (h, w) == src.shape:
        return BinMask(src.copy())
    rows = np.clip(
        np.floor((np.arange(h) + 0.5) * (src.shape[0] / h)), 0, src.shape[0] - 1
    ).astype(np.int64)
    cols = np.clip(
        np.floor((np.arange(w) + 0.5) * (src.shape[1] / w)), 0, src.shape[1] - 1
    ).astype(np.int64)
    return BinMask(src[np.ix_(rows, cols)])


def _open_png(path: str | Path) -> Image.Image:
    try:
        im = Image.open(path)
        im.load()
    except FileNotFoundError as e:
        raise RasterIOError(f"file not found: {path}") from e
    except UnidentifiedImageError as e:
        raise RasterIOError(f"not a readable image: {path}") from e
    except OSError as e:
        raise RasterIOError(f"failed to read image: {path}: {e}") from e
    audit.record(str(path))
    return im


def load_image(path: str | Path) -> GrayImage:
    """Load an 8-bit grayscale or 24-bit color PNG as GrayImage."""
    im = _open_png(path)
    if im.mode == "L":
        arr = np.asarray(im, dtype=np.float64) / 255.0
    elif im.mode == "RGB":
        arr = np.asarray(im, dtype=np.float64) @ _LUMA / 255.0
    else:
        raise RasterIOError(
            f"unsupported image mode {im.mode!r} (want 8-bit gray or 24-bit color): {path}"
        )
    return GrayImage(np.clip(arr, 0.0, 1.0))


def save_mask(m: BinMask, path: str | Path) -> None:
    """Write a binary mask as 8-bit grayscale PNG (0 background, 255 foreground)."""
    arr = np.where(m.bits, 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def load_mask(path: str | Path) -> BinMask:
    im = _open_png(path)
    if im.mode != "L":
        raise RasterIOError(f"mask must be 8-bit grayscale PNG, got mode {im.mode!r}: {path}")
    arr = np.asarray(im, dtype=np.uint8)
    bad = (arr != 0) & (arr != 255)
    if bad.any():
        raise RasterIOError(f"mask pixels must be 0 or 255, found other values: {path}")
    return BinMask(arr == 255)


def save_prob(p: ProbMask, path: str | Path) -> None:
    """Write a probability map as 16-bit grayscale PNG (value = round(p*65535))."""
    q = np.round(p.probs * PROB_SCALE).astype(np.uint16)
    Image.fromarray(q).save(path, format="PNG")  # uint16 -> mode I;16


def load_prob(path: str | Path) -> ProbMask:
    im = _open_png(path)
    if im.mode not in ("I;16", "I"):
        raise RasterIOError(f"probability map must be 16-bit grayscale PNG, got {im.mode!r}: {path}")
    arr = np.asarray(im, dtype=np.float64)
    if arr.max(initial=0.0) > PROB_SCALE:
        raise RasterIOError(f"probability sample exceeds 16-bit range: {path}")
    return ProbMask(arr / PROB_SCALE)


def mask_to_png_bytes(m: BinMask) -> bytes:
    buf = io.BytesIO()
    arr = np.where(m.bits, 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def mask_from_png_bytes(data: bytes) -> BinMask:
    try:
        im = Image.open(io.BytesIO(data))
        im.load()
    except (UnidentifiedImageError, OSError) as e:
        raise RasterIOError(f"undecodable mask PNG: {e}") from e
    if im.mode != "L":
        raise RasterIOError(f"mask PNG must be 8-bit grayscale, got {im.mode!r}")
    arr = np.asarray(im, dtype=np.uint8)
    if ((arr != 0) & (arr != 255)).any():
        raise RasterIOError("mask PNG pixels must be 0 or 255")
    return BinMask(arr == 255)


def image_to_png_bytes(img: GrayImage) -> bytes:
    buf = io.BytesIO()
    arr = np.round(img.pixels * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def image_from_png_bytes(data: bytes) -> GrayImage:
    try:
        im = Image.open(io.BytesIO(data))
        im.load()
    except (UnidentifiedImageError, OSError) as e:
        raise RasterIOError(f"undecodable image PNG: {e}") from e
    if im.mode == "L":
        arr = np.asarray(im, dtype=np.float64) / 255.0
    elif im.mode == "RGB":
        arr = np.asarray(im, dtype=np.float64) @ _LUMA / 255.0
    else:
        raise RasterIOError(f"unsupported image mode {im.mode!r}")
    return GrayImage(np.clip(arr, 0.0, 1.0))
