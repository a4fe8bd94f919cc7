"""White-box attacks on the spread-spectrum codec with a leaked key.

Both attacks run Adam on the pixels to pull the soft message towards a
target, projecting after each step onto the set of images within a PSNR
budget of the starting image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..bitstats import as_bits
from .keys import CodecKey
from .spread import SpreadExtractor

ATTACK_STEPS = 10
ATTACK_LR = 0.1
TARGET_MAGNITUDE = 3.0


@dataclass(frozen=True)
class AttackResult:
    image: np.ndarray
    target: np.ndarray
    psnr: float
    noop: bool


def _project(x0: np.ndarray, xa: np.ndarray, max_mse: float) -> np.ndarray:
    d = xa - x0
    err = float(np.mean(d**2))
    if err > max_mse:
        d *= math.sqrt(max_mse / err)
    return np.clip(x0 + d, 0.0, 1.0)


def _psnr(a, b) -> float:
    err = float(np.mean((a - b) ** 2))
    return math.inf if err == 0 else -10 * math.log10(err)


def steer_soft(
    x0: np.ndarray,
    key: CodecKey,
    target_bits,
    psnr_floor: float,
    steps: int = ATTACK_STEPS,
    lr: float = ATTACK_LR,
) -> AttackResult:
    """Minimise ``MSE(soft(x), target)`` subject to ``PSNR(x, x0) >= psnr_floor``."""
    if not psnr_floor > 0:
        raise ValueError("psnr_floor must be positive")
    x0 = np.asarray(x0, dtype=np.float64)
    target_bits = as_bits(target_bits, key.k)
    if math.isinf(psnr_floor):
        return AttackResult(x0.copy(), target_bits, math.inf, True)
    max_mse = 10.0 ** (-psnr_floor / 10.0)
    target = TARGET_MAGNITUDE * (2.0 * target_bits - 1.0)
    ext = SpreadExtractor(key)
    h, w = x0.shape[:2]

    # Adam runs on delta with x = x0 + radius * delta, so lr is a fraction of the budget.
    radius = math.sqrt(max_mse)
    delta = np.zeros_like(x0)
    m1 = np.zeros_like(x0)
    m2 = np.zeros_like(x0)
    b1, b2, eps = 0.9, 0.999, 1e-12
    xa = x0
    best = (float(np.mean((ext.soft(xa) - target) ** 2)), xa)
    for t in range(1, steps + 1):
        resid = ext.soft(xa) - target
        g = radius * ext.adjoint(2.0 * resid / key.k, h, w)
        m1 = b1 * m1 + (1 - b1) * g
        m2 = b2 * m2 + (1 - b2) * g * g
        delta = delta - lr * (m1 / (1 - b1**t)) / (np.sqrt(m2 / (1 - b2**t)) + eps)
        xa = _project(x0, x0 + radius * delta, max_mse)
        delta = (xa - x0) / radius
        loss = float(np.mean((ext.soft(xa) - target) ** 2))
        if loss < best[0]:
            best = (loss, xa)
    xa = best[1]
    return AttackResult(xa, target_bits, _psnr(x0, xa), bool(np.array_equal(xa, x0)))


def adversarial_remove(x_w: np.ndarray, key: CodecKey, psnr_floor: float, seed: int) -> AttackResult:
    """Push the extraction of ``x_w`` towards a random message drawn from ``seed``."""
    target = np.random.default_rng(seed).integers(0, 2, key.k)
    return steer_soft(x_w, key, target, psnr_floor)


def adversarial_forge(x: np.ndarray, key: CodecKey, victim_m, psnr_floor: float) -> AttackResult:
    """Make ``x`` decode to ``victim_m`` so that it is attributed to the victim."""
    return steer_soft(x, key, victim_m, psnr_floor)
