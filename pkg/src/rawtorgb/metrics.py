"""Image fidelity metrics, computed in float64 on display-range images.

psnr works on any same-shaped pair; ssim follows the standard recipe
(11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03) on the luma
channel, averaging only fully valid windows.
"""

from __future__ import annotations

import math

import numpy as np

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def _as64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def luma(rgb: np.ndarray) -> np.ndarray:
    """Weighted (H, W) luminance of a (3, H, W) image."""
    rgb = _as64(rgb)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"luma expects (3, H, W), got {rgb.shape}")
    r, g, b = LUMA_WEIGHTS
    return r * rgb[0] + g * rgb[1] + b * rgb[2]


def psnr(pred: np.ndarray, target: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE); identical inputs give +inf, not an error."""
    pred, target = _as64(pred), _as64(target)
    if pred.shape != target.shape:
        raise ValueError(f"psnr shapes differ: {pred.shape} vs {target.shape}")
    mse = float(np.mean((pred - target) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax * ax) / (2.0 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()


def _window_means(plane: np.ndarray, window: np.ndarray) -> np.ndarray:
    views = np.lib.stride_tricks.sliding_window_view(plane, window.shape)
    return np.einsum("ijkl,kl->ij", views, window)


def ssim(pred: np.ndarray, target: np.ndarray, window_size: int = 11,
         sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local structural similarity on luma over valid windows.

    Inputs are (3, H, W) display-range images (or (H, W) single planes).
    Identical inputs give exactly 1.0: every statistic is computed by
    the same expression for both sides, so numerator and denominator
    match bitwise.
    """
    pred, target = _as64(pred), _as64(target)
    if pred.shape != target.shape:
        raise ValueError(f"ssim shapes differ: {pred.shape} vs {target.shape}")
    x = luma(pred) if pred.ndim == 3 else pred
    y = luma(target) if target.ndim == 3 else target
    h, w = x.shape
    if h < window_size or w < window_size:
        raise ValueError(f"image {h}x{w} smaller than the {window_size}x{window_size} window")

    win = gaussian_window(window_size, sigma)
    mu_x = _window_means(x, win)
    mu_y = _window_means(y, win)
    sigma_x = _window_means(x * x, win) - mu_x * mu_x
    sigma_y = _window_means(y * y, win) - mu_y * mu_y
    sigma_xy = _window_means(x * y, win) - mu_x * mu_y

    c1 = (k1 * 1.0) ** 2
    c2 = (k2 * 1.0) ** 2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * sigma_xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sigma_x + sigma_y + c2)
    return float(np.mean(num / den))


def high_frequency_energy(rgb: np.ndarray) -> float:
    """Mean absolute 4-neighbor Laplacian of luma, interior pixels only.

    A blur-sensitivity probe: smoothing an image strictly lowers it.
    """
    plane = luma(rgb) if np.asarray(rgb).ndim == 3 else _as64(rgb)
    lap = (plane[:-2, 1:-1] + plane[2:, 1:-1] + plane[1:-1, :-2]
           + plane[1:-1, 2:] - 4.0 * plane[1:-1, 1:-1])
    return float(np.mean(np.abs(lap)))
