"""Exact statistics of the matching-bits test.

Under the null hypothesis the extracted bits are i.i.d. fair coins, so the
number of bits ``M`` agreeing with a fixed key is ``Binomial(k, 1/2)``.
Detection flags an image when ``M >= tau``; identification against ``N``
keys flags when the best score clears ``tau`` and accuses the argmax.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Literal, Sequence

import numpy as np
from scipy import special

Convention = Literal["GE", "GT"]

# Exact big-integer tails are cheap well beyond the sizes used in practice.
EXACT_MAX_K = 1024
# log-gamma terms carry ~1e-16 * log(k!) absolute error, so the check is looser there.
LOGGAMMA_RTOL = 1e-8


class InfeasibleTarget(ValueError):
    """No threshold reaches the requested false-positive rate."""


def as_bits(bits, k: int | None = None) -> np.ndarray:
    """Validate a bit message and return it as a ``uint8`` array."""
    arr = np.asarray(bits)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("a bit message must be a non-empty 1-D sequence")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError("bit messages may only contain 0 and 1")
    if k is not None and arr.size != k:
        raise ValueError(f"expected {k} bits, got {arr.size}")
    return arr.astype(np.uint8)


def bits_from_string(text: str) -> np.ndarray:
    return as_bits([int(c) for c in text.strip()])


def bits_to_string(bits) -> str:
    return "".join(str(int(b)) for b in bits)


def match_bits(a, b) -> int:
    """Number of positions where ``a`` and ``b`` agree."""
    a, b = as_bits(a), as_bits(b)
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    return int(np.count_nonzero(a == b))


def _check_tau(k: int, tau: int) -> None:
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if not 0 <= tau <= k:
        raise ValueError(f"tau must be in [0, {k}], got {tau}")


def _ge_tau(tau: int, convention: Convention) -> int:
    if convention == "GE":
        return tau
    if convention == "GT":
        return tau + 1
    raise ValueError(f"convention must be 'GE' or 'GT', got {convention!r}")


@lru_cache(maxsize=256)
def _tail_counts(k: int) -> tuple[int, ...]:
    """``counts[t]`` = number of k-bit messages with at least ``t`` matches."""
    row = [1]
    for i in range(k):
        row.append(row[-1] * (k - i) // (i + 1))
    counts = [0] * (k + 2)
    for t in range(k, -1, -1):
        counts[t] = counts[t + 1] + row[t]
    return tuple(counts)


def tail_exact(k: int, tau: int) -> Fraction:
    """``P(M >= tau)`` as an exact rational."""
    if tau <= 0:
        return Fraction(1)
    if tau > k:
        return Fraction(0)
    return Fraction(_tail_counts(k)[tau], 2**k)


def tail_beta(k: int, tau: int) -> float:
    """``P(M >= tau)`` through the regularized incomplete beta function.

    ``P(M >= t) = I_{1/2}(t, k - t + 1)`` for ``1 <= t <= k``.
    """
    if tau <= 0:
        return 1.0
    if tau > k:
        return 0.0
    return float(special.betainc(tau, k - tau + 1, 0.5))


def tail_loggamma(k: int, tau: int) -> float:
    """``P(M >= tau)`` from log-gamma terms summed in log space (large ``k``)."""
    if tau <= 0:
        return 1.0
    if tau > k:
        return 0.0
    i = np.arange(tau, k + 1)
    logs = special.gammaln(k + 1) - special.gammaln(i + 1) - special.gammaln(k - i + 1) - k * math.log(2)
    return min(1.0, float(np.exp(special.logsumexp(logs))))


def fpr_of_threshold(k: int, tau: int, convention: Convention = "GE") -> float:
    """False-positive rate of the test ``M >= tau`` (``GE``) or ``M > tau`` (``GT``).

    Two independent routes are computed and cross-checked: the incomplete
    beta closed form against exact integer summation (``k <= 1024``, to
    1e-12 relative, exact value returned) or against log-gamma summation
    above that (to 1e-8 relative, closed form returned).
    """
    _check_tau(k, tau)
    t = _ge_tau(tau, convention)
    closed = tail_beta(k, t)
    if k <= EXACT_MAX_K:
        value, reference, rtol = float(tail_exact(k, t)), float(tail_exact(k, t)), 1e-12
    else:
        value, reference, rtol = closed, tail_loggamma(k, t), LOGGAMMA_RTOL
    if not math.isclose(closed, reference, rel_tol=rtol, abs_tol=0.0):
        raise ArithmeticError(
            f"tail routes disagree for k={k}, tau={t}: beta={closed!r}, sum={reference!r}"
        )
    return value


def global_fpr(fpr: float, n_users: int) -> float:
    """Probability that at least one of ``n_users`` independent tests fires."""
    if not 0.0 <= fpr <= 1.0:
        raise ValueError(f"fpr must be in [0, 1], got {fpr}")
    if n_users < 1:
        raise ValueError(f"n_users must be >= 1, got {n_users}")
    if fpr == 1.0:
        return 1.0
    return -math.expm1(n_users * math.log1p(-fpr))


def threshold_for_fpr(k: int, target_fpr: float, n_users: int = 1) -> int:
    """Smallest ``tau`` whose global FPR over ``n_users`` keys is <= ``target_fpr``."""
    if not 0.0 < target_fpr < 1.0:
        raise ValueError(f"target_fpr must be in (0, 1), got {target_fpr}")
    for tau in range(k + 1):
        if global_fpr(fpr_of_threshold(k, tau), n_users) <= target_fpr:
            return tau
    raise InfeasibleTarget(
        f"even tau={k} gives global FPR {global_fpr(fpr_of_threshold(k, k), n_users):.3g} "
        f"> {target_fpr:g} for k={k}, N={n_users}"
    )


@dataclass(frozen=True)
class DetectionVerdict:
    score: int
    threshold: int
    flagged: bool
    p_value: float


@dataclass(frozen=True)
class IdentificationVerdict:
    best_index: int | None
    best_score: int
    flagged: bool
    threshold: int


def detect(m, m_prime, tau: int) -> DetectionVerdict:
    score = match_bits(m, m_prime)
    _check_tau(len(m), tau)
    return DetectionVerdict(score, tau, score >= tau, fpr_of_threshold(len(m), score))


def scores_against(m_prime, keys) -> np.ndarray:
    """Matching scores of ``m_prime`` against each row of ``keys``."""
    m_prime = as_bits(m_prime)
    keys = np.asarray(keys, dtype=np.uint8)
    if keys.ndim != 2 or keys.shape[0] == 0:
        raise ValueError("need a non-empty list of keys")
    if keys.shape[1] != m_prime.size:
        raise ValueError(f"key length {keys.shape[1]} != message length {m_prime.size}")
    return np.count_nonzero(keys == m_prime[None, :], axis=1)


def identify(m_prime, keys: Sequence, tau: int) -> IdentificationVerdict:
    """Attribute ``m_prime`` to the best-matching key if its score reaches ``tau``.

    Ties go to the lowest index.
    """
    scores = scores_against(m_prime, keys)
    best = int(np.argmax(scores))
    score = int(scores[best])
    flagged = score >= tau
    return IdentificationVerdict(best if flagged else None, score, flagged, tau)
