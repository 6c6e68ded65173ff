"""LR/HR pair synthesis, patch cropping, and the built-in toy image generator.

Degradation is plain bicubic: lr is the clean image shrunk by the scale
factor, lr_up is lr stretched straight back. Directory datasets are a flat
folder of PNGs holding clean images only; the degraded side is always
derived on the fly so the two can never drift out of alignment.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .imaging import ImagePlane, ResampleFilter, load_image, resample


@dataclass(frozen=True)
class LrHrPair:
    hr: ImagePlane
    lr: ImagePlane
    lr_up: ImagePlane

    def __post_init__(self):
        if self.lr_up.shape != self.hr.shape:
            raise ValueError(
                f"lr_up shape {self.lr_up.shape} must equal hr shape {self.hr.shape}"
            )
        if self.hr.height % self.lr.height or self.hr.width % self.lr.width:
            raise ValueError(
                f"hr {self.hr.height}x{self.hr.width} is not an integer multiple "
                f"of lr {self.lr.height}x{self.lr.width}"
            )
        if self.hr.height // self.lr.height != self.hr.width // self.lr.width:
            raise ValueError("hr/lr scale factor must match on both axes")

    @property
    def scale(self) -> int:
        return self.hr.height // self.lr.height


@dataclass(frozen=True)
class DatasetSpec:
    root: Path | None = None
    patch_size: int = 64
    scale: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.patch_size < 1:
            raise ValueError(f"patch_size must be >= 1, got {self.patch_size}")
        if self.scale < 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")
        if self.patch_size % self.scale:
            raise ValueError(
                f"patch_size {self.patch_size} must be divisible by scale {self.scale}"
            )


def make_pair(hr: ImagePlane, scale: int) -> LrHrPair:
    """Bicubic shrink by `scale` and stretch back to the original shape."""
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    if hr.height % scale or hr.width % scale:
        raise ValueError(
            f"image {hr.height}x{hr.width} not divisible by scale {scale}"
        )
    lr = resample(hr, hr.height // scale, hr.width // scale, ResampleFilter.BICUBIC)
    lr_up = resample(lr, hr.height, hr.width, ResampleFilter.BICUBIC)
    return LrHrPair(hr=hr, lr=lr, lr_up=lr_up)


def random_patch(
    source: ImagePlane, spec: DatasetSpec, rng: np.random.Generator
) -> LrHrPair:
    """Crop a patch at a scale-aligned uniform offset, then degrade it."""
    p = spec.patch_size
    if source.height < p or source.width < p:
        raise ValueError(
            f"source {source.height}x{source.width} smaller than patch {p}"
        )
    off_y = int(rng.integers((source.height - p) // spec.scale + 1)) * spec.scale
    off_x = int(rng.integers((source.width - p) // spec.scale + 1)) * spec.scale
    crop = ImagePlane.from_array(source.data[off_y : off_y + p, off_x : off_x + p])
    return make_pair(crop, spec.scale)


def _draw_shapes(rng: np.random.Generator, img: np.ndarray) -> None:
    """Paint solid rectangles, disks, and bars with hard edges in place."""
    size = img.shape[0]
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(int(rng.integers(4, 9))):
        color = rng.uniform(0.0, 1.0, size=img.shape[2])
        kind = int(rng.integers(3))
        if kind == 0:  # rectangle
            h = int(rng.integers(size // 8, size // 2))
            w = int(rng.integers(size // 8, size // 2))
            y0 = int(rng.integers(size - h))
            x0 = int(rng.integers(size - w))
            img[y0 : y0 + h, x0 : x0 + w] = color
        elif kind == 1:  # disk
            r = int(rng.integers(size // 10, size // 4))
            cy = int(rng.integers(r, size - r))
            cx = int(rng.integers(r, size - r))
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
            img[mask] = color
        else:  # oriented bar
            theta = rng.uniform(0.0, np.pi)
            offset = rng.uniform(0.25, 0.75) * size
            width = rng.uniform(1.5, max(2.0, size / 12))
            d = np.cos(theta) * xx + np.sin(theta) * yy - offset
            img[np.abs(d) < width] = color


def toy_image(size: int, rng: np.random.Generator) -> ImagePlane:
    """One synthetic sample: smooth band-limited base, an oriented ramp,
    and sharp geometry that plain interpolation cannot recover."""
    low = rng.uniform(0.0, 1.0, size=(max(size // 8, 2), max(size // 8, 2), 3))
    base = resample(ImagePlane.from_array(low), size, size, ResampleFilter.BICUBIC)
    img = 0.55 * base.data.copy() + 0.2
    theta = rng.uniform(0.0, 2.0 * np.pi)
    ramp = np.cos(theta) * np.arange(size)[None, :] + np.sin(theta) * np.arange(size)[:, None]
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-9)
    img += rng.uniform(-0.25, 0.25) * (ramp[:, :, None] - 0.5)
    _draw_shapes(rng, img)
    return ImagePlane.from_array(np.clip(img, 0.0, 1.0))


def toy_dataset(n: int, size: int, seed: int) -> list[ImagePlane]:
    """n reproducible synthetic images of shape (size, size, 3)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if size < 8:
        raise ValueError(f"size must be >= 8, got {size}")
    rng = np.random.default_rng(seed)
    return [toy_image(size, rng) for _ in range(n)]


def load_dir(root) -> list[tuple[str, ImagePlane]]:
    """Every *.png directly under root, sorted by name."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    out = []
    for path in sorted(root.glob("*.png")):
        out.append((path.name, load_image(path)))
    return out


def patch_stream(
    images: list[ImagePlane], spec: DatasetSpec, worker: int = 0
) -> Iterator[LrHrPair]:
    """Endless patch pairs; the sequence is a pure function of
    (spec.seed, worker)."""
    if not images:
        raise ValueError("patch_stream needs at least one source image")
    rng = np.random.default_rng([spec.seed, worker])
    while True:
        src = images[int(rng.integers(len(images)))]
        yield random_patch(src, spec, rng)
