"""Bernstein polynomial basis on the unit interval, with linear tails."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_ORDER = 64


@dataclass(frozen=True)
class SupportBounds:
    lower: float
    upper: float

    def __post_init__(self):
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise ValueError("support bounds must be finite")
        if not self.lower < self.upper:
            raise ValueError(f"lower bound {self.lower} must be below upper bound {self.upper}")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @classmethod
    def from_data(cls, y, margin: float = 0.1) -> "SupportBounds":
        """Data range widened by ``margin`` times the range on each side."""
        y = np.asarray(y, dtype=float)
        lo, hi = float(np.min(y)), float(np.max(y))
        span = hi - lo
        if span == 0.0:
            span = max(abs(lo), 1.0)
        return cls(lo - margin * span, hi + margin * span)


@dataclass(frozen=True)
class BasisEval:
    values: np.ndarray
    derivs: np.ndarray


def rescale(y, bounds: SupportBounds):
    """Map outcomes to the unit scale of ``bounds``; values outside stay outside."""
    arr = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite outcome")
    out = (arr - bounds.lower) / bounds.width
    return float(out) if out.ndim == 0 else out


@lru_cache(maxsize=None)
def _binomials(M: int) -> np.ndarray:
    # exact integers, rounded once to double
    return np.array([float(math.comb(M, m)) for m in range(M + 1)])


def _check_order(M: int) -> None:
    if not isinstance(M, (int, np.integer)) or M < 1 or M > MAX_ORDER:
        raise ValueError(f"unsupported order M={M}; need 1 <= M <= {MAX_ORDER}")


def _bernstein(t: np.ndarray, M: int) -> np.ndarray:
    k = np.arange(M + 1)
    return _binomials(M) * t[:, None] ** k * (1.0 - t[:, None]) ** (M - k)


def _basis_unit(t: np.ndarray, M: int) -> tuple[np.ndarray, np.ndarray]:
    values = _bernstein(t, M)
    if M == 1:
        lower = np.ones((t.shape[0], 1))
    else:
        lower = _bernstein(t, M - 1)
    derivs = np.zeros_like(values)
    derivs[:, 1:] += lower
    derivs[:, :-1] -= lower
    derivs *= M
    return values, derivs


def basis_matrix(t, M: int, extrapolate: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Basis values and derivatives for a vector of unit-scale points.

    Returns two ``(n, M + 1)`` arrays. With ``extrapolate`` the basis is
    continued linearly outside [0, 1] from the nearest endpoint, so any
    monotone coefficient vector yields a strictly increasing function of the
    whole real line.
    """
    _check_order(M)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if not np.all(np.isfinite(t)):
        raise ValueError("non-finite basis argument")
    if not extrapolate:
        if np.any((t < 0.0) | (t > 1.0)):
            raise ValueError("basis argument outside [0, 1]; use the extrapolated basis")
        return _basis_unit(t, M)
    tc = np.clip(t, 0.0, 1.0)
    values, derivs = _basis_unit(tc, M)
    offset = t - tc
    if np.any(offset):
        values = values + offset[:, None] * derivs
    return values, derivs


def basis(t: float, M: int) -> BasisEval:
    """Bernstein basis ``C(M,m) t^m (1-t)^(M-m)`` and its derivative at ``t`` in [0, 1]."""
    values, derivs = basis_matrix([t], M, extrapolate=False)
    return BasisEval(values[0], derivs[0])


def basis_extrapolated(t: float, M: int) -> BasisEval:
    values, derivs = basis_matrix([t], M, extrapolate=True)
    return BasisEval(values[0], derivs[0])
