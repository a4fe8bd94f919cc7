"""DCT-DWT quantisation-index-modulation codec.

One Haar level on luminance; the LL band is tiled into 8x8 blocks and the
DCT coefficient (3, 2) of every block is snapped onto the lattice
``delta * n + b * delta / 2`` of its bit. Bits are spread round-robin over
blocks and recovered by majority vote. Chroma is left untouched: the
luminance change is added equally to R, G and B.
"""

from __future__ import annotations

import numpy as np
from scipy.fft import dctn, idctn

from ..bitstats import as_bits
from ..imaging.buffer import luminance
from .keys import CodecKey

COEFF = (3, 2)
BLOCK = 8


def haar_forward(y: np.ndarray) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Orthonormal one-level Haar DWT of an even-sized plane."""
    a, b = y[0::2, 0::2], y[0::2, 1::2]
    c, d = y[1::2, 0::2], y[1::2, 1::2]
    ll = (a + b + c + d) / 2
    lh = (a - b + c - d) / 2
    hl = (a + b - c - d) / 2
    hh = (a - b - c + d) / 2
    return ll, (lh, hl, hh)


def haar_inverse(ll: np.ndarray, details: tuple[np.ndarray, np.ndarray, np.ndarray]) -> np.ndarray:
    lh, hl, hh = details
    out = np.empty((ll.shape[0] * 2, ll.shape[1] * 2))
    out[0::2, 0::2] = (ll + lh + hl + hh) / 2
    out[0::2, 1::2] = (ll - lh + hl - hh) / 2
    out[1::2, 0::2] = (ll + lh - hl - hh) / 2
    out[1::2, 1::2] = (ll - lh - hl + hh) / 2
    return out


def capacity(height: int, width: int) -> int:
    """Number of 8x8 LL blocks available in an image of the given size."""
    return (height // 2 // BLOCK) * (width // 2 // BLOCK)


def _check(x: np.ndarray, key: CodecKey) -> tuple[int, int]:
    if key.codec_kind != "dctdwt":
        raise ValueError(f"not a dctdwt key: {key.codec_kind}")
    h, w = x.shape[:2]
    cap = capacity(h, w)
    if cap < key.k:
        raise ValueError(f"{h}x{w} image holds {cap} blocks, fewer than k={key.k}")
    return h // 2 // BLOCK, w // 2 // BLOCK


def _block_coeffs(y: np.ndarray, nbh: int, nbw: int):
    ll, details = haar_forward(y[: 2 * (y.shape[0] // 2), : 2 * (y.shape[1] // 2)])
    region = ll[: nbh * BLOCK, : nbw * BLOCK]
    blocks = region.reshape(nbh, BLOCK, nbw, BLOCK).swapaxes(1, 2)
    return ll, details, dctn(blocks, axes=(-2, -1), norm="ortho")


def _bit_of_block(n_blocks: int, k: int) -> np.ndarray:
    return np.arange(n_blocks) % k


def embed_dctdwt(x: np.ndarray, key: CodecKey, m) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    m = as_bits(m, key.k)
    nbh, nbw = _check(x, key)
    y = luminance(x)
    ll, details, coefs = _block_coeffs(y, nbh, nbw)

    delta = key.delta
    bits = m[_bit_of_block(nbh * nbw, key.k)].reshape(nbh, nbw)
    offset = bits * delta / 2
    c = coefs[..., COEFF[0], COEFF[1]]
    coefs[..., COEFF[0], COEFF[1]] = np.round((c - offset) / delta) * delta + offset

    region = idctn(coefs, axes=(-2, -1), norm="ortho").swapaxes(1, 2).reshape(nbh * BLOCK, nbw * BLOCK)
    ll = ll.copy()
    ll[: nbh * BLOCK, : nbw * BLOCK] = region
    new_y = y.copy()
    eh, ew = 2 * ll.shape[0], 2 * ll.shape[1]
    new_y[:eh, :ew] = haar_inverse(ll, details)
    return np.clip(x + (new_y - y)[..., None], 0.0, 1.0)


def extract_dctdwt(x: np.ndarray, key: CodecKey) -> np.ndarray:
    """Majority vote of per-block nearest-lattice decisions (ties decode to 0)."""
    x = np.asarray(x, dtype=np.float64)
    nbh, nbw = _check(x, key)
    _, _, coefs = _block_coeffs(luminance(x), nbh, nbw)
    c = coefs[..., COEFF[0], COEFF[1]].ravel() / (key.delta / 2)
    # Even multiples of delta/2 carry 0, odd multiples carry 1.
    votes = np.round(c).astype(np.int64) % 2
    owner = _bit_of_block(votes.size, key.k)
    ones = np.bincount(owner, weights=votes, minlength=key.k)
    total = np.bincount(owner, minlength=key.k)
    return (2 * ones > total).astype(np.uint8)
