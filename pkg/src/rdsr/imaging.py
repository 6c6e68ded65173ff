"""Pixel containers, PNG I/O, separable resampling, and Y-channel conversion.

Conventions (fixed so downstream numbers are reproducible bit-for-bit):
  - intensities are float64 in [0, 1] inside the library; 8-bit quantization
    happens only at file boundaries
  - bicubic kernel is Catmull-Rom (a = -0.5)
  - resampling maps output pixel centers to input coordinates via
    src = (dst + 0.5) * (n_in / n_out) - 0.5, clamps taps to the edge, and
    widens the kernel support by the shrink ratio when downscaling
  - luma is ITU-R BT.601 studio swing:
    Y = (65.481 R + 128.553 G + 24.966 B) / 255 + 16 / 255
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image


class FormatError(ValueError):
    """Image file has an unsupported mode or bit depth."""


class ResampleFilter(Enum):
    NEAREST = "nearest"
    BILINEAR = "bilinear"
    BICUBIC = "bicubic"


@dataclass(frozen=True)
class ImagePlane:
    """Immutable (H, W, C) block of float64 intensities, C in {1, 3}.

    Values are nominally in [0, 1]; intermediate math may leave that range,
    `save_image` clamps. The backing array is made read-only on construction
    so planes are safe to share across threads.
    """

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if not isinstance(d, np.ndarray) or d.ndim != 3:
            raise ValueError("ImagePlane data must be an (H, W, C) ndarray")
        h, w, c = d.shape
        if h < 1 or w < 1:
            raise ValueError(f"ImagePlane dimensions must be positive, got {h}x{w}")
        if c not in (1, 3):
            raise ValueError(f"ImagePlane channels must be 1 or 3, got {c}")
        if d.dtype != np.float64:
            raise ValueError(f"ImagePlane data must be float64, got {d.dtype}")
        if d.flags.writeable or not d.flags.c_contiguous:
            d = np.ascontiguousarray(d).copy()
            d.flags.writeable = False
            object.__setattr__(self, "data", d)

    @classmethod
    def from_array(cls, arr) -> "ImagePlane":
        """Build a plane from any array-like; (H, W) input becomes 1-channel."""
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim == 2:
            a = a[:, :, None]
        return cls(a)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


def load_image(path) -> ImagePlane:
    """Read a lossless 8-bit PNG (grayscale or RGB; alpha dropped) as [0, 1].

    Raises OSError for unreadable files and FormatError for modes outside
    8-bit grayscale/RGB (16-bit, integer, and float PNGs are rejected).
    """
    with Image.open(path) as im:
        mode = im.mode
        if mode in ("I", "F") or mode.startswith("I;"):
            raise FormatError(f"{path}: unsupported bit depth (mode {mode!r})")
        if mode in ("L", "1"):
            im = im.convert("L")
        elif mode == "LA":
            im = im.convert("L")
        elif mode in ("RGB", "RGBA", "P", "PA"):
            im = im.convert("RGB")
        else:
            raise FormatError(f"{path}: unsupported image mode {mode!r}")
        arr = np.asarray(im, dtype=np.uint8)
    return ImagePlane.from_array(arr / 255.0)


def save_image(img: ImagePlane, path) -> None:
    """Clamp to [0, 1], quantize with round(v * 255), write an 8-bit PNG."""
    q = np.rint(np.clip(img.data, 0.0, 1.0) * 255.0).astype(np.uint8)
    if img.channels == 1:
        pil = Image.fromarray(q[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(q, mode="RGB")
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    pil.save(path, format="PNG")


def _cubic_kernel(x: np.ndarray) -> np.ndarray:
    # Catmull-Rom: a = -0.5
    a = -0.5
    ax = np.abs(x)
    out = np.zeros_like(ax)
    near = ax <= 1.0
    far = (ax > 1.0) & (ax < 2.0)
    out[near] = (a + 2.0) * ax[near] ** 3 - (a + 3.0) * ax[near] ** 2 + 1.0
    out[far] = a * (ax[far] ** 3 - 5.0 * ax[far] ** 2 + 8.0 * ax[far] - 4.0)
    return out


def _triangle_kernel(x: np.ndarray) -> np.ndarray:
    return np.clip(1.0 - np.abs(x), 0.0, None)


_KERNELS = {
    ResampleFilter.BILINEAR: (_triangle_kernel, 1.0),
    ResampleFilter.BICUBIC: (_cubic_kernel, 2.0),
}


def _axis_weights(n_in: int, n_out: int, filt: ResampleFilter) -> np.ndarray:
    """Dense (n_out, n_in) weight matrix for one axis.

    Out-of-range taps are folded onto the edge sample (clamp-to-edge) and
    each row is normalized to sum to 1, so constants are preserved exactly.
    """
    ratio = n_in / n_out
    centers = (np.arange(n_out) + 0.5) * ratio - 0.5
    weights = np.zeros((n_out, n_in))
    if filt is ResampleFilter.NEAREST:
        idx = np.clip(np.floor(centers + 0.5).astype(int), 0, n_in - 1)
        weights[np.arange(n_out), idx] = 1.0
        return weights
    kernel, support = _KERNELS[filt]
    scale = max(ratio, 1.0)  # widen support when shrinking (antialias)
    radius = support * scale
    for j, c in enumerate(centers):
        lo = int(np.ceil(c - radius))
        hi = int(np.floor(c + radius))
        taps = np.arange(lo, hi + 1)
        w = kernel((taps - c) / scale)
        total = w.sum()
        if total == 0.0:
            weights[j, min(max(int(round(c)), 0), n_in - 1)] = 1.0
            continue
        np.add.at(weights[j], np.clip(taps, 0, n_in - 1), w / total)
    return weights


def resample(img: ImagePlane, new_h: int, new_w: int, filt: ResampleFilter) -> ImagePlane:
    """Separable resampling to (new_h, new_w) with the given filter."""
    if new_h < 1 or new_w < 1:
        raise ValueError(f"target shape must be positive, got {new_h}x{new_w}")
    if filt is ResampleFilter.NEAREST and (new_h, new_w) == (img.height, img.width):
        return img
    w_rows = _axis_weights(img.height, new_h, filt)
    w_cols = _axis_weights(img.width, new_w, filt)
    # rows first, then columns, per channel: out = Wr @ img @ Wc^T
    tmp = np.tensordot(w_rows, img.data, axes=(1, 0))  # (new_h, W, C)
    out = np.tensordot(w_cols, tmp, axes=(1, 1)).transpose(1, 0, 2)  # (new_h, new_w, C)
    return ImagePlane.from_array(out)


# BT.601 studio-swing luma coefficients applied to R, G, B in [0, 1].
_LUMA_RGB = np.array([65.481, 128.553, 24.966]) / 255.0
_LUMA_OFFSET = 16.0 / 255.0


def to_luma(img: ImagePlane) -> ImagePlane:
    """BT.601 studio-swing Y channel; single-channel input passes through."""
    if img.channels == 1:
        return img
    y = img.data @ _LUMA_RGB + _LUMA_OFFSET
    return ImagePlane.from_array(y[:, :, None])
