"""Image quality metrics and the perceptual gain mask."""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from .buffer import luminance

SSIM_SIGMA = 1.5
SSIM_RADIUS = 5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def mse(a: np.ndarray, b: np.ndarray) -> float:
    _check_pair(a, b)
    return float(np.mean((np.asarray(a, float) - np.asarray(b, float)) ** 2))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit dynamic range; ``inf`` if equal."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return -10.0 * math.log10(err)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM on BT.601 luminance with an 11x11 Gaussian window (sigma 1.5).

    Local statistics are computed with reflected borders; the mean is taken
    over the interior where the window fits entirely.
    """
    _check_pair(a, b)
    if min(a.shape[0], a.shape[1]) < 2 * SSIM_RADIUS + 1:
        raise ValueError("ssim needs both sides >= 11")
    x = luminance(np.asarray(a, float))
    y = luminance(np.asarray(b, float))

    def blur(z):
        return ndimage.gaussian_filter(z, SSIM_SIGMA, mode="reflect", truncate=SSIM_RADIUS / SSIM_SIGMA)

    mx, my = blur(x), blur(y)
    vx = blur(x * x) - mx * mx
    vy = blur(y * y) - my * my
    cxy = blur(x * y) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * cxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)
    r = SSIM_RADIUS
    return float(np.mean((num / den)[r:-r, r:-r]))


def local_std(z: np.ndarray, size: int = 3) -> np.ndarray:
    m = ndimage.uniform_filter(z, size, mode="reflect")
    m2 = ndimage.uniform_filter(z * z, size, mode="reflect")
    return np.sqrt(np.maximum(m2 - m * m, 0.0))


def jnd_mask(
    x: np.ndarray,
    a: float = 0.5,
    b: float = 8.0,
    lo: float = 0.25,
    hi: float = 2.0,
) -> np.ndarray:
    """Per-pixel gain ``clip(a + b * localstd3x3(L), lo, hi)``, shape ``(H, W)``.

    Textured regions get a larger gain than flat ones, so additive
    distortion weighted by the mask lands where it is hardest to see.
    """
    return np.clip(a + b * local_std(luminance(np.asarray(x, float))), lo, hi)
