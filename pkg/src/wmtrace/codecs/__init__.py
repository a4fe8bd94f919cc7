"""Watermark codecs (DCT-DWT QIM and whitened spread spectrum) and attacks."""

from __future__ import annotations

import numpy as np

from ..whitening import fit_whitening
from .attacks import AttackResult, adversarial_forge, adversarial_remove
from .dctdwt import embed_dctdwt, extract_dctdwt
from .keys import CodecKey, keygen, load_key, save_key
from .spread import (
    SpreadExtractor,
    bce_message_loss,
    embed_ss_additive,
    embed_ss_iterative,
    extract_ss,
)

__all__ = [
    "AttackResult", "CodecKey", "SpreadExtractor", "adversarial_forge",
    "adversarial_remove", "bce_message_loss", "embed", "embed_dctdwt",
    "embed_ss_additive", "embed_ss_iterative", "extract", "extract_dctdwt",
    "extract_ss", "fit_key_whitening", "keygen", "load_key", "save_key",
]


def embed(x: np.ndarray, key: CodecKey, m, **kwargs) -> np.ndarray:
    """Embed with the codec's default method (iterative for spread spectrum)."""
    if key.codec_kind == "dctdwt":
        return embed_dctdwt(x, key, m)
    return embed_ss_iterative(x, key, m, **kwargs)


def extract(x: np.ndarray, key: CodecKey) -> np.ndarray:
    """Hard bits of ``x`` under ``key``."""
    if key.codec_kind == "dctdwt":
        return extract_dctdwt(x, key)
    return extract_ss(x, key)[1]


def fit_key_whitening(key: CodecKey, vanilla, eigen_floor: float | None = None) -> CodecKey:
    """Return ``key`` with whitening fitted on unwhitened outputs over ``vanilla`` images."""
    ext = SpreadExtractor(key.with_whitening(None))
    raws = np.array([ext.raw(np.asarray(x, dtype=np.float64)) for x in vanilla])
    return key.with_whitening(fit_whitening(raws, eigen_floor))
