"""Photometric loss: L1 plus D-SSIM (``1 - SSIM``), with analytic image gradient.

SSIM uses an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03 and a
dynamic range of 1. Windows are zero-padded to keep the map the image size;
the index is the mean of the map over pixels and channels.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

from ..errors import DimensionMismatch

WINDOW = 11
SIGMA = 1.5
C1 = 0.01**2
C2 = 0.03**2


def gaussian_window(size=WINDOW, sigma=SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


_G = gaussian_window()


def _blur(img):
    out = correlate1d(img, _G, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, _G, axis=1, mode="constant", cval=0.0)


def _check(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def _stats(x, y):
    mx, my = _blur(x), _blur(y)
    exx, eyy, exy = _blur(x * x), _blur(y * y), _blur(x * y)
    a1 = 2 * mx * my + C1
    a2 = 2 * (exy - mx * my) + C2
    b1 = mx * mx + my * my + C1
    b2 = (exx - mx * mx) + (eyy - my * my) + C2
    return mx, my, a1, a2, b1, b2


def ssim_map(x, y):
    x, y = _check(x, y)
    _, _, a1, a2, b1, b2 = _stats(x, y)
    return (a1 * a2) / (b1 * b2)


def ssim(x, y):
    return float(np.mean(ssim_map(x, y)))


def l1(x, y):
    x, y = _check(x, y)
    return float(np.mean(np.abs(x - y)))


def loss(rendered, gt, lambda_ssim=0.2):
    """``(total, l1, dssim)`` with ``total = (1 - lambda) l1 + lambda dssim``."""
    rendered, gt = _check(rendered, gt)
    l1v = float(np.mean(np.abs(gt - rendered)))
    dssim = 1.0 - ssim(gt, rendered)
    return (1 - lambda_ssim) * l1v + lambda_ssim * dssim, l1v, dssim


def loss_and_grad(rendered, gt, lambda_ssim=0.2):
    """Loss triple plus ``d total / d rendered``."""
    y, x = _check(rendered, gt)
    n = y.size
    diff = y - x
    l1v = float(np.mean(np.abs(diff)))
    mx, my, a1, a2, b1, b2 = _stats(x, y)
    m = (a1 * a2) / (b1 * b2)
    dssim = 1.0 - float(np.mean(m))
    total = (1 - lambda_ssim) * l1v + lambda_ssim * dssim

    grad = (1 - lambda_ssim) * np.sign(diff) / n
    if lambda_ssim != 0.0:
        g = m / n  # d mean(m) / d m, folded with m for the log-derivatives below
        g_my = g * (2 * mx / a1 - 2 * mx / a2 - 2 * my / b1 + 2 * my / b2)
        g_eyy = g * (-1.0 / b2)
        g_exy = g * (2.0 / a2)
        d_ssim = _blur(g_my) + 2 * y * _blur(g_eyy) + x * _blur(g_exy)
        grad = grad - lambda_ssim * d_ssim
    return (total, l1v, dssim), grad
