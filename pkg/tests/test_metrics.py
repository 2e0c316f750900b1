"""Metric tests against brute-force reference implementations.

The references here use explicit loops and direct formulas so they share
no code with the metrics module.
"""

import math

import numpy as np
import pytest

from rawtorgb.metrics import (gaussian_window, high_frequency_energy, luma,
                              psnr, ssim)

LUMA = (0.299, 0.587, 0.114)


def psnr_reference(pred, target, peak=1.0):
    err = 0.0
    pf = np.asarray(pred, dtype=np.float64).ravel()
    tf = np.asarray(target, dtype=np.float64).ravel()
    for a, b in zip(pf, tf):
        err += (a - b) ** 2
    mse = err / pf.size
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def ssim_reference(x, y, size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Loop over every valid window; direct weighted moments."""
    win = np.empty((size, size))
    for i in range(size):
        for j in range(size):
            di = i - (size - 1) / 2.0
            dj = j - (size - 1) / 2.0
            win[i, j] = math.exp(-(di * di + dj * dj) / (2 * sigma * sigma))
    win /= win.sum()
    c1, c2 = k1 ** 2, k2 ** 2
    h, w = x.shape
    vals = []
    for i in range(h - size + 1):
        for j in range(w - size + 1):
            px = x[i:i + size, j:j + size]
            py = y[i:i + size, j:j + size]
            mx = float(np.sum(win * px))
            my = float(np.sum(win * py))
            vx = float(np.sum(win * px * px)) - mx * mx
            vy = float(np.sum(win * py * py)) - my * my
            vxy = float(np.sum(win * px * py)) - mx * my
            num = (2 * mx * my + c1) * (2 * vxy + c2)
            den = (mx * mx + my * my + c1) * (vx + vy + c2)
            vals.append(num / den)
    return float(np.mean(vals))


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_psnr_matches_reference(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, size=(3, 16, 16))
    b = rng.uniform(0, 1, size=(3, 16, 16))
    assert abs(psnr(a, b) - psnr_reference(a, b)) < 1e-6


def test_psnr_identical_is_infinite():
    a = np.random.default_rng(0).uniform(0, 1, size=(3, 8, 8))
    assert psnr(a, a) == math.inf


def test_psnr_known_value():
    # constant offset of 0.1: MSE = 0.01, PSNR = 20 dB
    a = np.zeros((4, 4))
    b = np.full((4, 4), 0.1)
    assert abs(psnr(a, b) - 20.0) < 1e-9


def test_psnr_peak_parameter():
    a = np.zeros((4, 4))
    b = np.full((4, 4), 0.1)
    assert abs(psnr(a, b, peak=2.0) - (20.0 + 20.0 * math.log10(2.0))) < 1e-9


def test_psnr_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_ssim_matches_reference(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, size=(3, 16, 16))
    b = np.clip(a + rng.normal(0, 0.05, size=a.shape), 0, 1)
    lx = LUMA[0] * a[0] + LUMA[1] * a[1] + LUMA[2] * a[2]
    ly = LUMA[0] * b[0] + LUMA[1] * b[1] + LUMA[2] * b[2]
    assert abs(ssim(a, b) - ssim_reference(lx, ly)) < 1e-6


def test_ssim_identical_is_exactly_one():
    a = np.random.default_rng(5).uniform(0, 1, size=(3, 16, 16))
    assert ssim(a, a) == 1.0


def test_ssim_decreases_with_noise():
    rng = np.random.default_rng(6)
    a = rng.uniform(0.2, 0.8, size=(3, 24, 24))
    mild = np.clip(a + rng.normal(0, 0.02, a.shape), 0, 1)
    heavy = np.clip(a + rng.normal(0, 0.2, a.shape), 0, 1)
    assert ssim(a, a) > ssim(mild, a) > ssim(heavy, a)


def test_ssim_accepts_single_plane():
    rng = np.random.default_rng(7)
    x = rng.uniform(0, 1, size=(16, 16))
    y = rng.uniform(0, 1, size=(16, 16))
    assert abs(ssim(x, y) - ssim_reference(x, y)) < 1e-6


def test_ssim_rejects_images_smaller_than_window():
    with pytest.raises(ValueError):
        ssim(np.zeros((3, 8, 8)), np.zeros((3, 8, 8)))


def test_gaussian_window_normalized_and_symmetric():
    win = gaussian_window(11, 1.5)
    assert abs(win.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(win, win.T)
    np.testing.assert_allclose(win, win[::-1, ::-1])
    assert win[5, 5] == win.max()


def test_luma_weights():
    img = np.zeros((3, 2, 2))
    img[0] = 1.0
    assert abs(luma(img)[0, 0] - 0.299) < 1e-12
    img = np.ones((3, 2, 2))
    np.testing.assert_allclose(luma(img), 1.0)


def test_luma_rejects_wrong_shape():
    with pytest.raises(ValueError):
        luma(np.zeros((4, 4)))


def test_high_frequency_energy_blur_ordering():
    rng = np.random.default_rng(8)
    img = rng.uniform(0, 1, size=(3, 20, 20))
    # 3x3 box blur, applied per channel with edge-replicated padding
    blurred = np.empty_like(img)
    for c in range(3):
        p = np.pad(img[c], 1, mode="edge")
        acc = np.zeros_like(img[c])
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                acc += p[1 + dy:21 + dy, 1 + dx:21 + dx]
        blurred[c] = acc / 9.0
    assert high_frequency_energy(blurred) < high_frequency_energy(img)


def test_high_frequency_energy_flat_image_is_zero():
    assert high_frequency_energy(np.full((3, 8, 8), 0.4)) == 0.0


def test_high_frequency_energy_matches_direct_laplacian():
    rng = np.random.default_rng(9)
    img = rng.uniform(0, 1, size=(3, 10, 10))
    plane = LUMA[0] * img[0] + LUMA[1] * img[1] + LUMA[2] * img[2]
    vals = []
    for i in range(1, 9):
        for j in range(1, 9):
            lap = (plane[i - 1, j] + plane[i + 1, j] + plane[i, j - 1]
                   + plane[i, j + 1] - 4 * plane[i, j])
            vals.append(abs(lap))
    assert abs(high_frequency_energy(img) - np.mean(vals)) < 1e-12
