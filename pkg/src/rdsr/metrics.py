"""Fidelity metrics on the luma channel: PSNR and windowed SSIM.

Three-channel inputs are converted to BT.601 studio-swing Y before either
metric is computed, matching the usual SR evaluation protocol. SSIM uses an
11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1.0,
and averages only fully-valid windows. No border pixels are shaved.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imaging import ImagePlane, load_image, to_luma

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class OrphanFilesError(ValueError):
    """Prediction and reference directories do not hold the same file names."""

    def __init__(self, orphans: list[str]):
        self.orphans = list(orphans)
        super().__init__("unmatched files: " + ", ".join(self.orphans))


class NoImagesError(ValueError):
    """No PNG files to evaluate."""


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    n_images: int
    per_image: list[tuple[str, float, float]] = field(default_factory=list)
    psnr_excluded: int = 0  # infinite per-image PSNRs left out of the mean


def _luma_2d(img: ImagePlane) -> np.ndarray:
    return to_luma(img).data[:, :, 0]


def psnr(a: ImagePlane, b: ImagePlane) -> float:
    """10*log10(1/MSE) in dB over luma; +inf when the images are identical."""
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    ya, yb = _luma_2d(a), _luma_2d(b)
    mse = float(np.mean((ya - yb) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(n: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(n, dtype=np.float64) - (n - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation with the 1-d window along both axes."""
    n = g.size
    rows = np.zeros((img.shape[0] - n + 1, img.shape[1]))
    for k in range(n):
        rows += g[k] * img[k : k + rows.shape[0], :]
    out = np.zeros((rows.shape[0], img.shape[1] - n + 1))
    for k in range(n):
        out += g[k] * rows[:, k : k + out.shape[1]]
    return out


def ssim(a: ImagePlane, b: ImagePlane) -> float:
    """Mean local SSIM over all fully-valid windows."""
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    ya, yb = _luma_2d(a), _luma_2d(b)
    if min(ya.shape) < SSIM_WINDOW:
        raise ValueError(
            f"ssim: image {ya.shape} smaller than {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    g = _gaussian_window()
    mu_a = _filter_valid(ya, g)
    mu_b = _filter_valid(yb, g)
    var_a = _filter_valid(ya * ya, g) - mu_a**2
    var_b = _filter_valid(yb * yb, g) - mu_b**2
    cov = _filter_valid(ya * yb, g) - mu_a * mu_b
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def _aggregate(per_image: list[tuple[str, float, float]]) -> MetricReport:
    psnrs = [p for _, p, _ in per_image]
    finite = [p for p in psnrs if math.isfinite(p)]
    if finite:
        mean_psnr = float(np.mean(finite))
        excluded = len(psnrs) - len(finite)
    else:
        mean_psnr = math.inf
        excluded = 0
    mean_ssim = float(np.mean([s for _, _, s in per_image]))
    return MetricReport(
        psnr_db=mean_psnr,
        ssim=mean_ssim,
        n_images=len(per_image),
        per_image=per_image,
        psnr_excluded=excluded,
    )


def evaluate_pairs(pairs: list[tuple[str, ImagePlane, ImagePlane]]) -> MetricReport:
    """Per-name metrics plus arithmetic means (infinite PSNRs excluded from
    the mean unless every image is identical)."""
    if not pairs:
        raise NoImagesError("no images to evaluate")
    per_image = [(name, psnr(p, r), ssim(p, r)) for name, p, r in sorted(pairs)]
    return _aggregate(per_image)


def evaluate_dir(pred_dir, ref_dir) -> MetricReport:
    """Pair *.png files by name across the two directories and evaluate."""
    pred_dir, ref_dir = Path(pred_dir), Path(ref_dir)
    pred_names = {p.name for p in pred_dir.glob("*.png")}
    ref_names = {p.name for p in ref_dir.glob("*.png")}
    if not pred_names and not ref_names:
        raise NoImagesError(f"no images in {pred_dir} or {ref_dir}")
    orphans = sorted(pred_names ^ ref_names)
    if orphans:
        raise OrphanFilesError(orphans)
    pairs = [
        (name, load_image(pred_dir / name), load_image(ref_dir / name))
        for name in sorted(pred_names)
    ]
    return evaluate_pairs(pairs)


def _fmt_psnr(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.4f}"


def format_table(report: MetricReport) -> str:
    lines = [f"{'name':<32} {'psnr_db':>10} {'ssim':>8}"]
    for name, p, s in report.per_image:
        lines.append(f"{name:<32} {_fmt_psnr(p):>10} {s:>8.4f}")
    lines.append(f"{'mean':<32} {_fmt_psnr(report.psnr_db):>10} {report.ssim:>8.4f}")
    if report.psnr_excluded:
        lines.append(
            f"# {report.psnr_excluded} identical image(s) excluded from the PSNR mean"
        )
    return "\n".join(lines)


def write_csv(report: MetricReport, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["name", "psnr_db", "ssim"])
        for name, p, s in report.per_image:
            writer.writerow([name, _fmt_psnr(p), f"{s:.6f}"])
        writer.writerow(["mean", _fmt_psnr(report.psnr_db), f"{report.ssim:.6f}"])
