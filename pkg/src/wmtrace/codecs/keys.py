"""Codec keys: secret per-user material, JSON key files, carrier generation."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..whitening import WhiteningTransform

KEY_FILE_VERSION = 1
KINDS = ("dctdwt", "spreadspectrum")
DEFAULT_ALPHA = 0.03
DEFAULT_DELTA = 36.0 / 255.0
DEFAULT_CANONICAL = 256
MAX_K = 256


@dataclass(frozen=True)
class CodecKey:
    codec_kind: str
    k: int
    seed: int
    alpha: float = DEFAULT_ALPHA
    delta: float = DEFAULT_DELTA
    canonical_size: int = DEFAULT_CANONICAL
    whitening: WhiteningTransform | None = None

    def __post_init__(self):
        if self.codec_kind not in KINDS:
            raise ValueError(f"codec_kind must be one of {KINDS}, got {self.codec_kind!r}")
        if not 1 <= self.k <= MAX_K:
            raise ValueError(f"k must be in [1, {MAX_K}], got {self.k}")
        if self.alpha <= 0 or self.delta <= 0:
            raise ValueError("alpha and delta must be positive")
        if self.canonical_size < 32:
            raise ValueError("canonical_size must be >= 32")
        if self.whitening is not None and self.whitening.k != self.k:
            raise ValueError(f"whitening is for k={self.whitening.k}, key has k={self.k}")

    @property
    def carriers(self) -> np.ndarray:
        """``(k, S, S)`` carrier patterns, regenerated from the seed."""
        return make_carriers(self.k, self.seed, self.canonical_size)

    def with_whitening(self, whitening: WhiteningTransform | None) -> "CodecKey":
        return replace(self, whitening=whitening)

    def to_dict(self) -> dict:
        return {
            "version": KEY_FILE_VERSION,
            "codec_kind": self.codec_kind,
            "k": self.k,
            "seed": self.seed,
            "alpha": self.alpha,
            "delta": self.delta,
            "canonical_size": self.canonical_size,
            "whitening": None if self.whitening is None else self.whitening.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CodecKey":
        if d.get("version") != KEY_FILE_VERSION:
            raise ValueError(f"unsupported key file version {d.get('version')!r}")
        w = d.get("whitening")
        return cls(
            codec_kind=d["codec_kind"],
            k=int(d["k"]),
            seed=int(d["seed"]),
            alpha=float(d["alpha"]),
            delta=float(d["delta"]),
            canonical_size=int(d["canonical_size"]),
            whitening=None if w is None else WhiteningTransform.from_dict(w),
        )


def keygen(kind: str, k: int, seed: int, **params) -> CodecKey:
    """Deterministic key for ``kind``; extra ``params`` override defaults (alpha, delta, canonical_size)."""
    if not isinstance(k, (int, np.integer)) or not 1 <= k <= MAX_K:
        raise ValueError(f"unsupported payload length k={k}")
    key = CodecKey(kind, int(k), int(seed) & (2**64 - 1), **params)
    if kind == "spreadspectrum":
        key.carriers  # fail early on impossible geometry
    return key


def save_key(key: CodecKey, path: str | Path) -> None:
    Path(path).write_text(json.dumps(key.to_dict(), indent=2) + "\n")


def load_key(path: str | Path) -> CodecKey:
    return CodecKey.from_dict(json.loads(Path(path).read_text()))


@lru_cache(maxsize=16)
def make_carriers(k: int, seed: int, size: int) -> np.ndarray:
    """Seeded Gaussian fields, low-passed (9x9, sigma 2), orthonormalised.

    Each carrier is zero-mean with unit RMS; distinct carriers are exactly
    orthogonal after Gram-Schmidt.
    """
    rng = np.random.default_rng([0xCA881E5, seed])
    fields = rng.standard_normal((k, size, size))
    fields = ndimage.gaussian_filter(fields, (0, 2.0, 2.0), mode="reflect", truncate=2.0)
    flat = fields.reshape(k, -1)
    flat -= flat.mean(axis=1, keepdims=True)
    q, r = np.linalg.qr(flat.T)
    # Fix the sign ambiguity of QR so carriers stay close to the raw fields.
    q = q * np.sign(np.diag(r))[None, :]
    carriers = (q.T * np.sqrt(size * size)).reshape(k, size, size)
    carriers.setflags(write=False)
    return carriers
