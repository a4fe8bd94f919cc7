"""Lossy stages of baseline JPEG, without entropy coding.

Entropy coding is lossless, so decoding the dequantized coefficients gives
the same pixels a full encode/decode cycle would.
"""

from __future__ import annotations

import numpy as np
from scipy.fft import dctn, idctn

from .buffer import from_uint8, to_uint8

LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)

CHROMA_TABLE = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=np.float64)


def quality_scale(quality: int) -> float:
    """Table scaling in percent: 5000/q below 50, else 200 - 2q."""
    if not 1 <= quality <= 100:
        raise ValueError(f"quality must be in [1, 100], got {quality}")
    return 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality


def scaled_table(base: np.ndarray, quality: int) -> np.ndarray:
    table = np.floor((base * quality_scale(quality) + 50.0) / 100.0)
    return np.clip(table, 1.0, 255.0)


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b
    return np.stack([y, cb, cr], axis=-1)


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = ycc[..., 0], ycc[..., 1] - 128.0, ycc[..., 2] - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b], axis=-1)


def _blocks(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    return plane.reshape(h // 8, 8, w // 8, 8).swapaxes(1, 2)


def _unblocks(blocks: np.ndarray) -> np.ndarray:
    nh, nw = blocks.shape[:2]
    return blocks.swapaxes(1, 2).reshape(nh * 8, nw * 8)


def _code_plane(plane: np.ndarray, table: np.ndarray) -> np.ndarray:
    coefs = dctn(_blocks(plane - 128.0), axes=(-2, -1), norm="ortho")
    coefs = np.round(coefs / table) * table
    return _unblocks(idctn(coefs, axes=(-2, -1), norm="ortho")) + 128.0


def jpeg_roundtrip(x: np.ndarray, quality: int) -> np.ndarray:
    """Compress and decompress ``x`` at ``quality`` (4:2:0, standard tables)."""
    luma_q = scaled_table(LUMA_TABLE, quality)
    chroma_q = scaled_table(CHROMA_TABLE, quality)
    h, w = x.shape[:2]
    ph, pw = -h % 16, -w % 16
    rgb = to_uint8(x).astype(np.float64)
    rgb = np.pad(rgb, ((0, ph), (0, pw), (0, 0)), mode="edge")
    ycc = np.clip(np.round(rgb_to_ycbcr(rgb)), 0, 255)

    out = np.empty_like(ycc)
    out[..., 0] = _code_plane(ycc[..., 0], luma_q)
    H, W = ycc.shape[:2]
    for c in (1, 2):
        sub = ycc[..., c].reshape(H // 2, 2, W // 2, 2).mean(axis=(1, 3))
        ph2, pw2 = -sub.shape[0] % 8, -sub.shape[1] % 8
        sub = np.pad(sub, ((0, ph2), (0, pw2)), mode="edge")
        coded = _code_plane(sub, chroma_q)[: H // 2, : W // 2]
        out[..., c] = np.repeat(np.repeat(coded, 2, axis=0), 2, axis=1)

    rgb_out = np.clip(np.round(ycbcr_to_rgb(out)), 0, 255)[:h, :w]
    return from_uint8(rgb_out)
