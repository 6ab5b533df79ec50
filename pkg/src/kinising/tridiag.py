"""Eigenvalues of symmetric tridiagonal matrices by Sturm-sequence bisection."""

from __future__ import annotations

import numpy as np

from ._jit import kernel

__all__ = ["bisect_eigenvalue", "tridiagonal_eigenvalue", "gershgorin_interval"]


@kernel
def bisect_eigenvalue(diag, off_sq, k, lo, hi, max_iter):
    """``k``-th smallest eigenvalue (0-based) inside ``[lo, hi]``.

    ``off_sq`` holds the squared off-diagonal entries.  The count of
    eigenvalues below ``x`` is the number of negative pivots of the
    ``LDL^T`` factorization of ``T - x I``.
    """
    n = diag.shape[0]
    tiny = 1e-300
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        count = 0
        q = diag[0] - mid
        if q < 0.0:
            count += 1
        for i in range(1, n):
            if q == 0.0:
                q = -tiny
            q = diag[i] - mid - off_sq[i - 1] / q
            if q < 0.0:
                count += 1
        if count > k:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def gershgorin_interval(diag, off) -> tuple[float, float]:
    diag = np.asarray(diag, dtype=float)
    r = np.zeros_like(diag)
    a = np.abs(np.asarray(off, dtype=float))
    r[:-1] += a
    r[1:] += a
    return float(np.min(diag - r)), float(np.max(diag + r))


def tridiagonal_eigenvalue(diag, off, k: int, max_iter: int = 2000) -> float:
    """``k``-th smallest eigenvalue of the matrix with diagonal ``diag`` and off-diagonal ``off``.

    Bisection runs until the bracket stops shrinking in floating point, so
    the result is accurate to a few ulps of the matrix norm.
    """
    diag = np.ascontiguousarray(diag, dtype=float)
    off = np.asarray(off, dtype=float)
    if not 0 <= k < diag.shape[0]:
        raise ValueError(f"eigenvalue index {k} out of range for size {diag.shape[0]}")
    lo, hi = gershgorin_interval(diag, off)
    pad = 1e-12 * max(1.0, abs(lo), abs(hi))
    return float(bisect_eigenvalue(diag, np.ascontiguousarray(off * off), int(k), lo - pad, hi + pad, int(max_iter)))
