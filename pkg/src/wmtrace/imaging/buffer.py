"""Image buffers: validation, colour conversion, resampling and file I/O.

Images are plain ``numpy`` arrays of shape ``(H, W, 3)`` holding float64
values in ``[0, 1]``.
"""

from __future__ import annotations

from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image

MIN_SIDE = 8
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def as_image(x, *, copy: bool = False) -> np.ndarray:
    """Validate ``x`` as an image buffer and return it as float64."""
    arr = np.array(x, dtype=np.float64, copy=copy)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 image, got shape {arr.shape}")
    if arr.shape[0] < MIN_SIDE or arr.shape[1] < MIN_SIDE:
        raise ValueError(f"image sides must be >= {MIN_SIDE}, got {arr.shape[:2]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    return np.clip(arr, 0.0, 1.0)


def luminance(x: np.ndarray) -> np.ndarray:
    """BT.601 luma of an ``(H, W, 3)`` array."""
    return x @ LUMA_WEIGHTS


def _catmull_rom(t: np.ndarray) -> np.ndarray:
    t = np.abs(t)
    out = np.zeros_like(t)
    near = t < 1
    far = (t >= 1) & (t < 2)
    out[near] = 1.5 * t[near] ** 3 - 2.5 * t[near] ** 2 + 1
    out[far] = -0.5 * t[far] ** 3 + 2.5 * t[far] ** 2 - 4 * t[far] + 2
    return out


@lru_cache(maxsize=64)
def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense ``(n_out, n_in)`` Catmull-Rom resampling operator.

    The kernel is stretched by the scale factor when downsampling so the
    operator low-passes before decimating. Borders replicate edge samples.
    """
    scale = n_in / n_out
    support = max(scale, 1.0)
    centers = (np.arange(n_out) + 0.5) * scale - 0.5
    radius = int(np.ceil(2 * support))
    offsets = np.arange(-radius, radius + 2)
    taps = np.floor(centers)[:, None].astype(int) + offsets[None, :]
    weights = _catmull_rom((taps - centers[:, None]) / support)
    weights /= weights.sum(axis=1, keepdims=True)
    mat = np.zeros((n_out, n_in))
    rows = np.repeat(np.arange(n_out), taps.shape[1])
    np.add.at(mat, (rows, np.clip(taps, 0, n_in - 1).ravel()), weights.ravel())
    mat.setflags(write=False)
    return mat


def resize(x: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bicubic resize of a 2-D or 3-D array (no clamping)."""
    rh = resize_matrix(x.shape[0], height)
    rw = resize_matrix(x.shape[1], width)
    if x.ndim == 2:
        return rh @ x @ rw.T
    return np.einsum("ij,jkc,lk->ilc", rh, x, rw, optimize=True)


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def from_uint8(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) / 255.0


def read_image(path: str | Path) -> np.ndarray:
    """Read a PNG or binary PPM (P6) file into a ``[0, 1]`` float buffer."""
    with Image.open(path) as im:
        return as_image(from_uint8(np.asarray(im.convert("RGB"))))


def write_image(path: str | Path, x: np.ndarray) -> None:
    """Write ``x`` as 8-bit PNG or PPM, chosen by file suffix."""
    path = Path(path)
    fmt = {".png": "PNG", ".ppm": "PPM"}.get(path.suffix.lower())
    if fmt is None:
        raise ValueError(f"unsupported image format: {path.suffix!r} (use .png or .ppm)")
    Image.fromarray(to_uint8(x)).save(path, format=fmt)
