"""PSNR and SSIM scoring on [0,1] images."""

import numpy as np
from scipy.signal import convolve2d

from .tensor_io import require_tensor

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def _check_pair(a, b):
    require_tensor(a, "a")
    require_tensor(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    for t, name in ((a, "a"), (b, "b")):
        if t.min() < -1e-6 or t.max() > 1.0 + 1e-6:
            raise ValueError(f"{name} values outside [0,1]: "
                             f"[{t.min():.4g}, {t.max():.4g}]")


def psnr(a, b):
    """10*log10(1/MSE) in dB; identical inputs give float('inf')."""
    _check_pair(a, b)
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def _luma(t):
    if t.shape[1] == 3:
        r, g, b = LUMA_WEIGHTS
        return r * t[:, 0] + g * t[:, 1] + b * t[:, 2]
    if t.shape[1] == 1:
        return t[:, 0]
    raise ValueError(f"need 1 or 3 channels for SSIM, got {t.shape[1]}")


def _gaussian_window():
    half = SSIM_WINDOW // 2
    g = np.exp(-np.arange(-half, half + 1, dtype=np.float64) ** 2
               / (2 * SSIM_SIGMA ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a, b):
    """Mean local SSIM on luma, 11x11 Gaussian window, standard constants."""
    _check_pair(a, b)
    h, w = a.shape[2:]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"image {h}x{w} smaller than the {SSIM_WINDOW}-px window")
    x = _luma(a.astype(np.float64))
    y = _luma(b.astype(np.float64))
    win = _gaussian_window()
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    scores = []
    for n in range(x.shape[0]):
        f = lambda img: convolve2d(img, win, mode="valid")
        mu_x = f(x[n])
        mu_y = f(y[n])
        var_x = f(x[n] * x[n]) - mu_x * mu_x
        var_y = f(y[n] * y[n]) - mu_y * mu_y
        cov = f(x[n] * y[n]) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
        den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))
