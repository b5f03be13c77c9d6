"""Image quality metrics."""

from __future__ import annotations

import math

import numpy as np
from scipy import signal

from .errors import DimensionError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    """10 log10(peak² / MSE) in dB; ``math.inf`` for identical images."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 2-D Gaussian weights."""
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _luma(img: np.ndarray) -> np.ndarray:
    if img.ndim == 3:
        return img.mean(axis=2)
    return img


def ssim_map(a, b, data_range: float = 1.0) -> np.ndarray:
    """Local SSIM over every fully contained 11x11 Gaussian window."""
    a, b = _pair(a, b)
    a, b = _luma(a), _luma(b)
    if min(a.shape) < SSIM_WINDOW:
        raise DimensionError(f"images of shape {a.shape} are smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    w = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    def filt(img: np.ndarray) -> np.ndarray:
        return signal.correlate2d(img, w, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean SSIM, channel-mean luma for multi-channel (H, W, C) images."""
    return float(np.mean(ssim_map(a, b, data_range)))
