"""Deterministic synthetic image corpus.

Images follow a dead-leaves occlusion model (opaque discs with power-law
radii) with a smooth illumination field and a 1/f texture on top, which
reproduces the edge and spectrum statistics of natural photographs well
enough for codec benchmarking. Everything is derived from an integer seed.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage


def _pink_noise(rng: np.random.Generator, h: int, w: int, exponent: float) -> np.ndarray:
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.rfftfreq(w)[None, :]
    f = np.sqrt(fx**2 + fy**2)
    f[0, 0] = 1.0
    spectrum = (rng.standard_normal(f.shape) + 1j * rng.standard_normal(f.shape)) / f**exponent
    spectrum[0, 0] = 0.0
    field = np.fft.irfft2(spectrum, s=(h, w))
    return field / field.std()


def seed_image(seed: int, size: int = 512, n_leaves: int = 800) -> np.ndarray:
    """One ``(size, size, 3)`` image in ``[0, 1]``."""
    rng = np.random.default_rng([0x5EED, seed])
    h = w = size
    img = np.empty((h, w, 3))
    img[:] = rng.uniform(0.3, 0.5) + rng.normal(0.0, 0.05, size=3)
    yy, xx = np.mgrid[0:h, 0:w]
    rmin, rmax = size / 120.0, size / 3.0
    # Radii with density ~ r^-3 (scale-invariant dead leaves).
    u = rng.random(n_leaves)
    radii = 1.0 / np.sqrt(u / rmin**2 + (1 - u) / rmax**2)
    for r in radii:
        cy, cx = rng.uniform(-r, h + r), rng.uniform(-r, w + r)
        y0, y1 = max(int(cy - r), 0), min(int(cy + r) + 2, h)
        x0, x1 = max(int(cx - r), 0), min(int(cx + r) + 2, w)
        if y0 >= y1 or x0 >= x1:
            continue
        d2 = (yy[y0:y1, x0:x1] - cy) ** 2 + (xx[y0:y1, x0:x1] - cx) ** 2
        # Slightly soft edge, as optics would blur it.
        alpha = np.clip(r + 0.5 - np.sqrt(d2), 0.0, 1.0)[..., None]
        color = np.clip(rng.normal(0.42, 0.18) + rng.normal(0.0, 0.06, size=3), 0.02, 0.98)
        patch = img[y0:y1, x0:x1]
        patch += alpha * (color - patch)
    img = ndimage.gaussian_filter(img, (0.8, 0.8, 0), mode="reflect")
    light = 1.0 + 0.25 * _pink_noise(rng, h, w, 2.0)
    texture = 0.03 * _pink_noise(rng, h, w, 1.0)[..., None]
    img = img * light[..., None] + texture
    return np.clip(img, 0.0, 1.0)


def seed_corpus(n: int, size: int = 512, offset: int = 0) -> list[np.ndarray]:
    return [seed_image(offset + i, size) for i in range(n)]
