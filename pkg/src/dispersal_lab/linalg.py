"""Tridiagonal and cyclic-tridiagonal solves.

Thin wrappers over LAPACK (``?gtsv`` through ``scipy.linalg.solve_banded``
and ``?gttrf/?gttrs`` for repeated right-hand sides).
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lapack, solve_banded


def solve_tridiagonal(lower, diag, upper, rhs):
    """Solve T x = rhs for T with sub-, main and super-diagonals.

    ``lower`` and ``upper`` have length n-1. ``rhs`` may be (n,) or (n, k).
    """
    n = len(diag)
    ab = np.zeros((3, n))
    ab[0, 1:] = upper
    ab[1] = diag
    ab[2, :-1] = lower
    return solve_banded((1, 1), ab, rhs, check_finite=False)


class FactoredTridiagonal:
    """LU factorization of a tridiagonal matrix, reused across right-hand sides."""

    def __init__(self, lower, diag, upper):
        dl, d, du, du2, ipiv, info = lapack.dgttrf(
            np.asarray(lower, dtype=float), np.asarray(diag, dtype=float), np.asarray(upper, dtype=float)
        )
        if info != 0:
            raise np.linalg.LinAlgError(f"tridiagonal factorization failed (info={info})")
        self._factors = (dl, d, du, du2, ipiv)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        dl, d, du, du2, ipiv = self._factors
        x, info = lapack.dgttrs(dl, d, du, du2, ipiv, np.asarray(rhs, dtype=float))
        if info != 0:
            raise np.linalg.LinAlgError(f"tridiagonal solve failed (info={info})")
        return x


def solve_cyclic_tridiagonal(lower, diag, upper, corner_low, corner_up, rhs):
    """Solve a periodic tridiagonal system by Sherman-Morrison.

    ``corner_low`` is entry (n-1, 0) and ``corner_up`` entry (0, n-1).
    """
    diag = np.asarray(diag, dtype=float)
    n = len(diag)
    gamma = -diag[0] if diag[0] != 0 else -1.0
    d = diag.copy()
    d[0] -= gamma
    d[-1] -= corner_low * corner_up / gamma
    u = np.zeros(n)
    u[0] = gamma
    u[-1] = corner_low
    v0, vn = 1.0, corner_up / gamma
    sol = solve_tridiagonal(lower, d, upper, np.column_stack([rhs, u]))
    y, z = sol[:, 0], sol[:, 1]
    factor = (v0 * y[0] + vn * y[-1]) / (1.0 + v0 * z[0] + vn * z[-1])
    return y - factor * z


def tridiagonal_matvec(lower, diag, upper, x):
    x = np.asarray(x, dtype=float)
    out = diag * x
    out[:-1] += upper * x[1:]
    out[1:] += lower * x[:-1]
    return out


def cyclic_matvec(lower, diag, upper, corner_low, corner_up, x):
    out = tridiagonal_matvec(lower, diag, upper, x)
    out[0] += corner_up * x[-1]
    out[-1] += corner_low * x[0]
    return out
