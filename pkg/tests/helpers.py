"""Shared test utilities: slow reference implementations used as oracles.

Everything here is deliberately written as directly as possible (per-pixel
loops, no vectorization tricks) so it can serve as an independent check on
the library's fast paths.
"""

from __future__ import annotations

import math

import numpy as np

from rdsr.imaging import ImagePlane


def random_plane(
    rng: np.random.Generator, h: int, w: int, c: int = 3
) -> ImagePlane:
    return ImagePlane.from_array(rng.uniform(0.0, 1.0, size=(h, w, c)))


def quantized_plane(
    rng: np.random.Generator, h: int, w: int, c: int = 3, levels: int = 256
) -> ImagePlane:
    """Values on a k/(levels-1)-ish dyadic grid, exactly float32-representable."""
    vals = rng.integers(0, levels, size=(h, w, c)) / 256.0
    return ImagePlane.from_array(vals)


def cubic_kernel(x: float, a: float = -0.5) -> float:
    x = abs(x)
    if x < 1.0:
        return (a + 2.0) * x**3 - (a + 3.0) * x**2 + 1.0
    if x < 2.0:
        return a * x**3 - 5.0 * a * x**2 + 8.0 * a * x - 4.0 * a
    return 0.0


def naive_bicubic(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Per-pixel Catmull-Rom resampler: center-aligned source mapping,
    clamp-to-edge, kernel widened by the ratio when shrinking, weights
    renormalized per output pixel."""
    in_h, in_w, c = img.shape
    ry, rx = in_h / out_h, in_w / out_w
    sy, sx = max(ry, 1.0), max(rx, 1.0)
    out = np.zeros((out_h, out_w, c))
    for oy in range(out_h):
        cy = (oy + 0.5) * ry - 0.5
        lo_y = math.ceil(cy - 2.0 * sy)
        hi_y = math.floor(cy + 2.0 * sy)
        wy = [(j, cubic_kernel((cy - j) / sy)) for j in range(lo_y, hi_y + 1)]
        ty = sum(w for _, w in wy)
        for ox in range(out_w):
            cx = (ox + 0.5) * rx - 0.5
            lo_x = math.ceil(cx - 2.0 * sx)
            hi_x = math.floor(cx + 2.0 * sx)
            wx = [(i, cubic_kernel((cx - i) / sx)) for i in range(lo_x, hi_x + 1)]
            tx = sum(w for _, w in wx)
            acc = np.zeros(c)
            for j, w_j in wy:
                jj = min(max(j, 0), in_h - 1)
                for i, w_i in wx:
                    ii = min(max(i, 0), in_w - 1)
                    acc += (w_j / ty) * (w_i / tx) * img[jj, ii]
            out[oy, ox] = acc
    return out


def naive_ssim_gray(a: np.ndarray, b: np.ndarray) -> float:
    """Sliding-window SSIM over every full 11x11 window, one window at a
    time, with the standard Gaussian weighting and constants."""
    n, sigma = 11, 1.5
    k1, k2 = 0.01, 0.03
    c1, c2 = k1**2, k2**2
    ax = np.arange(n) - (n - 1) / 2.0
    g1 = np.exp(-(ax**2) / (2.0 * sigma**2))
    g1 /= g1.sum()
    g = np.outer(g1, g1)
    h, w = a.shape
    values = []
    for y in range(h - n + 1):
        for x in range(w - n + 1):
            wa = a[y : y + n, x : x + n]
            wb = b[y : y + n, x : x + n]
            mu_a = float((g * wa).sum())
            mu_b = float((g * wb).sum())
            var_a = float((g * wa * wa).sum()) - mu_a**2
            var_b = float((g * wb * wb).sum()) - mu_b**2
            cov = float((g * wa * wb).sum()) - mu_a * mu_b
            num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
            den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
            values.append(num / den)
    return float(np.mean(values))


def adam_reference(
    theta: float,
    grads: list[float],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> float:
    """Textbook Adam recurrence on a single scalar parameter."""
    m = v = 0.0
    for k, g in enumerate(grads, start=1):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**k)
        v_hat = v / (1.0 - beta2**k)
        theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
    return theta
