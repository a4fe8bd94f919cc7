"""PCA whitening of soft extractor outputs, and i.i.d. diagnostics for hard bits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InsufficientSamples(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class WhiteningTransform:
    """Affine map ``v -> weight @ v + bias``.

    ``weight = (L + eps I)^-1/2 U^T`` and ``bias = -weight @ mu`` where
    ``U L U^T`` is the eigendecomposition of the fitting covariance.
    """

    weight: np.ndarray
    bias: np.ndarray
    eigen_floor: float = 0.0

    def __post_init__(self):
        w = np.array(self.weight, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or b.shape != (w.shape[0],):
            raise ValueError(f"bad whitening shapes: weight {w.shape}, bias {b.shape}")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    def __eq__(self, other):
        if not isinstance(other, WhiteningTransform):
            return NotImplemented
        return np.array_equal(self.weight, other.weight) and np.array_equal(self.bias, other.bias)

    def __hash__(self):
        return hash((self.weight.tobytes(), self.bias.tobytes()))

    @property
    def k(self) -> int:
        return self.bias.size

    @classmethod
    def identity(cls, k: int) -> "WhiteningTransform":
        return cls(np.eye(k), np.zeros(k))

    def __call__(self, soft: np.ndarray) -> np.ndarray:
        return apply_whitening(self, soft)

    def to_dict(self) -> dict:
        return {
            "weight": self.weight.tolist(),
            "bias": self.bias.tolist(),
            "eigen_floor": self.eigen_floor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WhiteningTransform":
        return cls(np.array(d["weight"]), np.array(d["bias"]), float(d.get("eigen_floor", 0.0)))


def fit_whitening(samples, eigen_floor: float | None = None) -> WhiteningTransform:
    """Fit on an ``(n, k)`` matrix of soft outputs from unmarked images.

    ``eigen_floor`` defaults to ``1e-8 * trace(cov) / k`` so that
    rank-deficient populations give a finite (if noise-dominated) map.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"samples must be an (n, k) matrix, got shape {x.shape}")
    n, k = x.shape
    if n <= k:
        raise InsufficientSamples(f"need more than k={k} samples, got {n}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples contain non-finite values")
    mu = x.mean(axis=0)
    cov = np.cov(x, rowvar=False).reshape(k, k)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = np.clip(evals[order], 0.0, None), evecs[:, order]
    if eigen_floor is None:
        eigen_floor = 1e-8 * float(np.trace(cov)) / k
    denom = evals + eigen_floor
    if np.any(denom <= 0):
        # Fully constant population; nothing to normalise against.
        denom = np.where(denom > 0, denom, 1.0)
    weight = evecs.T / np.sqrt(denom)[:, None]
    return WhiteningTransform(weight, -weight @ mu, float(eigen_floor))


def apply_whitening(t: WhiteningTransform, soft) -> np.ndarray:
    """Whiten a k-vector or an ``(n, k)`` batch."""
    v = np.asarray(soft, dtype=np.float64)
    if v.shape[-1] != t.k:
        raise ValueError(f"expected trailing dimension {t.k}, got {v.shape}")
    return v @ t.weight.T + t.bias


def hard_bits(values) -> np.ndarray:
    """Strictly positive values decode to 1, everything else to 0."""
    return (np.asarray(values) > 0).astype(np.uint8)


@dataclass(frozen=True)
class IidReport:
    per_bit_mean: np.ndarray
    max_bias: float
    max_offdiag_corr: float
    sample_count: int
    degenerate: bool

    def to_dict(self) -> dict:
        return {
            "per_bit_mean": self.per_bit_mean.tolist(),
            "max_bias": self.max_bias,
            "max_offdiag_corr": self.max_offdiag_corr,
            "sample_count": self.sample_count,
            "degenerate": self.degenerate,
        }


def iid_diagnostics(hard) -> IidReport:
    """Per-bit means and the largest pairwise correlation of an ``(n, k)`` bit matrix.

    Constant columns have undefined correlation; they contribute 0 and set
    ``degenerate``.
    """
    b = np.asarray(hard, dtype=np.float64)
    if b.ndim != 2 or b.shape[0] < 2:
        raise ValueError("need an (n, k) bit matrix with n >= 2")
    means = b.mean(axis=0)
    centered = b - means
    std = np.sqrt((centered**2).mean(axis=0))
    constant = std == 0
    safe = np.where(constant, 1.0, std)
    corr = (centered.T @ centered) / b.shape[0] / np.outer(safe, safe)
    corr[constant, :] = 0.0
    corr[:, constant] = 0.0
    np.fill_diagonal(corr, 0.0)
    max_corr = float(np.max(np.abs(corr))) if corr.size else 0.0
    return IidReport(
        per_bit_mean=means,
        max_bias=float(np.max(np.abs(means - 0.5))),
        max_offdiag_corr=min(max_corr, 1.0),
        sample_count=b.shape[0],
        degenerate=bool(constant.any()),
    )
