"""Image quality metrics: PSNR and SSIM."""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatch

LUMA = np.array([0.299, 0.587, 0.114])  # Rec. 601
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"images differ in shape: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for peak 1; ``inf`` for identical images."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def luma(image) -> np.ndarray:
    a = np.asarray(image, dtype=float)
    if a.ndim == 2:
        return a
    if a.ndim == 3 and a.shape[2] == 1:
        return a[..., 0]
    if a.ndim == 3 and a.shape[2] == 3:
        return a @ LUMA
    raise DimensionMismatch(f"expected a gray or RGB image, got shape {a.shape}")


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_map(a, b, data_range: float = 1.0) -> np.ndarray:
    """Local SSIM over every fully contained 11x11 window of the luma images."""
    a, b = _pair(luma(a), luma(b))
    win = gaussian_window()
    if a.shape[0] < win.shape[0] or a.shape[1] < win.shape[1]:
        raise DimensionMismatch("images are smaller than the SSIM window")
    h = win.shape[0] // 2
    valid = (slice(h, a.shape[0] - h), slice(h, a.shape[1] - h))

    def filt(x):
        return ndimage.correlate(x, win, mode="constant")[valid]

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean structural similarity on Rec. 601 luma (Gaussian window, sigma 1.5)."""
    return float(np.mean(ssim_map(a, b, data_range)))
