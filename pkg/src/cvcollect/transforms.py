"""Orthonormal DCT-II by direct matrix application, and top-s truncation."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=32)
def _dct_matrix(N: int) -> np.ndarray:
    i = np.arange(N, dtype=np.int64)[:, None]            # frequency (0-based)
    j2 = 2 * np.arange(N, dtype=np.int64)[None, :] + 1    # twice the sample midpoint
    # reduce the angle index exactly before the cosine to keep entries accurate for large N
    m = (i * j2) % (4 * N)
    lam = np.ones((N, 1))
    lam[0] = 1 / np.sqrt(2)
    psi = np.sqrt(2.0 / N) * lam * np.cos(np.pi * m / (2 * N))
    psi.flags.writeable = False
    return psi


def dct_matrix(N: int) -> np.ndarray:
    """Psi with ``alpha = Psi @ x``; rows are the cosine basis vectors."""
    if N < 1:
        raise ValueError("N must be >= 1")
    return _dct_matrix(int(N))


@dataclass(frozen=True, eq=False)
class DctCoefficients:
    alpha: np.ndarray

    @property
    def N(self) -> int:
        return len(self.alpha)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.alpha, dtype=dtype)


def dct_forward(x) -> DctCoefficients:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or len(x) == 0:
        raise ValueError("need a non-empty 1-D vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    return DctCoefficients(dct_matrix(len(x)) @ x)


def dct_inverse(alpha) -> np.ndarray:
    a = np.asarray(getattr(alpha, "alpha", alpha), dtype=np.float64)
    if a.ndim != 1 or len(a) == 0:
        raise ValueError("need a non-empty 1-D coefficient vector")
    return dct_matrix(len(a)).T @ a


def dct_truncate(alpha, s: int) -> DctCoefficients:
    """Keep the ``s`` largest-magnitude coefficients; ties keep the lower index."""
    a = np.asarray(getattr(alpha, "alpha", alpha), dtype=np.float64)
    N = len(a)
    if not 1 <= s <= N:
        raise ValueError(f"s must be in 1..{N}, got {s}")
    order = np.argsort(-np.abs(a), kind="stable")
    out = np.zeros_like(a)
    keep = order[:s]
    out[keep] = a[keep]
    return DctCoefficients(out)


def dct_compress(x, s: int) -> np.ndarray:
    """Reconstruction from the top-s coefficients."""
    return dct_inverse(dct_truncate(dct_forward(x), s))
