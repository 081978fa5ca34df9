"""Distortion metrics on [0, 1]-valued grayscale states."""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate1d


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak ** 2 / err)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    return w / w.sum()


def _filter_valid(x, w):
    # separable filtering over every axis, then crop to positions where the window fits
    out = x
    for ax in range(x.ndim):
        out = correlate1d(out, w, axis=ax, mode="constant")
    half = len(w) // 2
    return out[tuple(slice(half, n - half) for n in x.shape)]


def ssim(a, b, window: int = 11, k1: float = 0.01, k2: float = 0.03, peak: float = 1.0,
         sigma: float = 1.5) -> float:
    """Mean structural similarity over a Gaussian window (1-D signals or 2-D images)."""
    a, b = _pair(a, b)
    if min(a.shape) < window:
        raise ValueError(f"input of shape {a.shape} is smaller than the {window}-wide window")
    w = gaussian_window(window, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    mu_a = _filter_valid(a, w)
    mu_b = _filter_valid(b, w)
    var_a = _filter_valid(a * a, w) - mu_a ** 2
    var_b = _filter_valid(b * b, w) - mu_b ** 2
    cov = _filter_valid(a * b, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
