"""Whitened spread-spectrum codec.

The extractor is affine in pixel values: resize to the canonical frame,
take BT.601 luminance, remove a 9x9 Gaussian low-pass, correlate with each
carrier, then apply the key's whitening. Because of that, embedding and the
white-box attacks get exact gradients through :meth:`SpreadExtractor.adjoint`.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..bitstats import as_bits
from ..imaging.buffer import LUMA_WEIGHTS, luminance, resize, resize_matrix
from ..imaging.metrics import jnd_mask
from ..imaging.transforms import TransformSpec, apply_transform, linear_adjoint, output_shape
from ..whitening import WhiteningTransform, hard_bits
from .keys import CodecKey, make_carriers

HIGHPASS_SIGMA = 2.0
HIGHPASS_RADIUS = 4
# Correlations are reported in per-mille so that unwhitened scores are O(1).
CORR_GAIN = 1000.0
IDENTITY = TransformSpec("identity")


@lru_cache(maxsize=8)
def _gauss_matrix(n: int) -> np.ndarray:
    """1-D 9-tap Gaussian smoothing as a dense matrix with mirrored borders."""
    t = np.arange(-HIGHPASS_RADIUS, HIGHPASS_RADIUS + 1)
    w = np.exp(-(t**2) / (2 * HIGHPASS_SIGMA**2))
    w /= w.sum()
    idx = np.arange(n)[:, None] + t[None, :]
    idx = np.where(idx < 0, -idx - 1, idx)
    idx = np.where(idx >= n, 2 * n - idx - 1, idx)
    mat = np.zeros((n, n))
    np.add.at(mat, (np.repeat(np.arange(n), t.size), idx.ravel()), np.tile(w, n))
    return mat


def highpass(y: np.ndarray) -> np.ndarray:
    g = _gauss_matrix(y.shape[0]), _gauss_matrix(y.shape[1])
    return y - g[0] @ y @ g[1].T


@lru_cache(maxsize=8)
def _effective_carriers(k: int, seed: int, size: int) -> np.ndarray:
    """Rows ``e_j`` with ``raw_j = <e_j, y>`` for a canonical-frame luminance ``y``."""
    c = make_carriers(k, seed, size)
    g = _gauss_matrix(size)
    eff = c - np.einsum("ai,kab,bj->kij", g, c, g, optimize=True)
    eff = eff.reshape(k, -1) * (CORR_GAIN / (size * size))
    eff.setflags(write=False)
    return eff


class SpreadExtractor:
    """Affine soft-message extractor bound to one key."""

    def __init__(self, key: CodecKey):
        if key.codec_kind != "spreadspectrum":
            raise ValueError(f"not a spread-spectrum key: {key.codec_kind}")
        self.key = key
        self.size = key.canonical_size
        self.effective = _effective_carriers(key.k, key.seed, key.canonical_size)
        self.whitening = key.whitening or WhiteningTransform.identity(key.k)

    def canonical(self, x: np.ndarray) -> np.ndarray:
        lum = luminance(x)
        rh = resize_matrix(lum.shape[0], self.size)
        rw = resize_matrix(lum.shape[1], self.size)
        return rh @ lum @ rw.T

    def raw(self, x: np.ndarray) -> np.ndarray:
        return self.effective @ self.canonical(x).ravel()

    def soft(self, x: np.ndarray) -> np.ndarray:
        return self.whitening(self.raw(x))

    def adjoint(self, g_soft: np.ndarray, height: int, width: int) -> np.ndarray:
        """Pixel gradient ``(H, W, 3)`` of ``<g_soft, soft(x)>``."""
        g_raw = self.whitening.weight.T @ g_soft
        y = (g_raw @ self.effective).reshape(self.size, self.size)
        rh = resize_matrix(height, self.size)
        rw = resize_matrix(width, self.size)
        return (rh.T @ y @ rw)[..., None] * LUMA_WEIGHTS

    def pattern(self, m) -> np.ndarray:
        """Minimum-energy canonical-frame luminance pattern with response ``2m - 1``.

        With ``A = weight @ effective`` this is ``A^T (A A^T)^-1 (2m - 1)``,
        so every bit gets the same whitened margin per unit of distortion.
        """
        signs = 2.0 * as_bits(m, self.key.k) - 1.0
        a = self.whitening.weight @ self.effective
        return (a.T @ np.linalg.solve(a @ a.T, signs)).reshape(self.size, self.size)


@lru_cache(maxsize=16)
def extractor_for(key: CodecKey) -> SpreadExtractor:
    return SpreadExtractor(key)


def extract_ss(x: np.ndarray, key: CodecKey) -> tuple[np.ndarray, np.ndarray]:
    """Soft message and hard bits of ``x`` under ``key``."""
    soft = extractor_for(key).soft(np.asarray(x, dtype=np.float64))
    return soft, hard_bits(soft)


def _unit_rms(z: np.ndarray) -> np.ndarray:
    rms = np.sqrt(np.mean(z**2))
    return z / rms if rms > 0 else z


def embed_ss_additive(x: np.ndarray, key: CodecKey, m, alpha: float | None = None) -> np.ndarray:
    """``clip(x + alpha * D)`` with ``D`` the JND-shaped pattern at unit RMS."""
    alpha = key.alpha if alpha is None else alpha
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape[:2]
    if min(h, w) < key.canonical_size // 4:
        raise ValueError(f"image {h}x{w} too small for canonical size {key.canonical_size}")
    if alpha == 0:
        return x.copy()
    pat = _unit_rms(resize(extractor_for(key).pattern(m), h, w))
    shaped = _unit_rms(jnd_mask(x) * pat)
    return np.clip(x + alpha * shaped[..., None], 0.0, 1.0)


DEFAULT_LAMBDA = 0.4
DEFAULT_STEPS = 10
# Scales the perceptual term so that lambda_i ~ 1 balances a nominal-strength mark.
PERCEPTUAL_WEIGHT = 4.0


def bce_message_loss(soft, m) -> float:
    """Summed binary cross-entropy between ``sigmoid(soft)`` and bits ``m``."""
    soft = np.asarray(soft, dtype=np.float64)
    m = as_bits(m)
    if soft.shape != m.shape:
        raise ValueError(f"length mismatch: {soft.shape} vs {m.shape}")
    # -log sigmoid(z) = logaddexp(0, -z)
    return float(np.sum(np.logaddexp(0.0, np.where(m == 1, -soft, soft))))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _proxy_jacobian(ext: SpreadExtractor, t: TransformSpec, mask_can: np.ndarray) -> np.ndarray:
    """Approximate rows of d soft(t(x)) / d u for a canonical-frame distortion ``u``.

    The edit is replayed on a canonical-size proxy of the image, which is
    exact for the geometry up to rounding of crop boxes.
    """
    size = ext.size
    rows = (ext.whitening.weight @ ext.effective).reshape(-1, size, size)
    out_h, out_w = output_shape(t, (size, size))
    g = np.moveaxis(rows, 0, -1)
    if (out_h, out_w) != (size, size):
        rh, rw = resize_matrix(out_h, size), resize_matrix(out_w, size)
        g = np.einsum("ji,jkn,kl->iln", rh, g, rw, optimize=True)
    g = linear_adjoint(t, g, (size, size))
    return (g * mask_can[..., None]).reshape(size * size, -1).T


def embed_ss_iterative(
    x: np.ndarray,
    key: CodecKey,
    m,
    lambda_i: float = DEFAULT_LAMBDA,
    steps: int = DEFAULT_STEPS,
    augment=(IDENTITY,),
) -> np.ndarray:
    """Optimise the distortion so the (attacked) extraction decodes ``m``.

    Minimises ``mean_T BCE(soft(T(x_w)), m) + lambda_i * L_i`` where ``L_i``
    is the JND-weighted MSE in units of ``alpha**2``. The distortion lives on
    the canonical grid, is upsampled and shaped by the JND mask, and is
    updated by damped Newton steps in the span of the extractor gradients.
    Losses are always evaluated on the real edits (JPEG included), so JPEG
    acts straight-through. Returns the best iterate seen.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if lambda_i < 0:
        raise ValueError("lambda_i must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    m = as_bits(m, key.k)
    h, w = x.shape[:2]
    ext = SpreadExtractor(key)
    size = ext.size
    augment = tuple(augment)
    n_aug = len(augment)

    mask = jnd_mask(x)
    mask_can = resize(mask, size, size)
    jac = np.concatenate([_proxy_jacobian(ext, t, mask_can) for t in augment])
    gram = jac @ jac.T
    rho = lambda_i * PERCEPTUAL_WEIGHT / (key.alpha**2 * size * size)
    target = np.tile(m, n_aug).astype(np.float64)

    def evaluate(coef):
        d = mask * resize((coef @ jac).reshape(size, size), h, w)
        xw = np.clip(x + d[..., None], 0.0, 1.0)
        soft = np.concatenate([ext.soft(apply_transform(xw, t)) for t in augment])
        bce = sum(bce_message_loss(s, m) for s in soft.reshape(n_aug, -1)) / n_aug
        perceptual = np.mean(((xw - x) / mask[..., None]) ** 2) / key.alpha**2
        return bce + lambda_i * PERCEPTUAL_WEIGHT * perceptual, soft, xw

    coef = np.zeros(jac.shape[0])
    loss, soft, xw = evaluate(coef)
    best = (loss, xw)
    ridge = 1e-9 * np.trace(gram) / gram.shape[0]
    for _ in range(steps):
        sig = _sigmoid(soft)
        grad = (sig - target) / n_aug + 2 * rho * coef
        curv = (sig * (1 - sig) / n_aug)[:, None] * gram
        step = -np.linalg.solve(curv + (2 * rho + ridge) * np.eye(len(coef)), grad)
        for _ in range(6):
            trial = evaluate(coef + step)
            if trial[0] < loss:
                break
            step = step / 2
        coef = coef + step
        loss, soft, xw = trial
        if loss < best[0]:
            best = (loss, xw)
    return best[1]
