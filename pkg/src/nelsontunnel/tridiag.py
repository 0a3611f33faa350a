"""Thomas algorithm for complex tridiagonal systems with a reusable factorization."""

import numba as nb
import numpy as np


class SingularSystemError(ArithmeticError):
    """A zero pivot was met during elimination."""


@nb.njit(cache=True)
def _factor(lower, diag, upper, cp, inv_denom):
    n = diag.shape[0]
    d = diag[0]
    if d == 0:
        return 0
    inv_denom[0] = 1.0 / d
    cp[0] = upper[0] * inv_denom[0]
    for i in range(1, n):
        d = diag[i] - lower[i - 1] * cp[i - 1]
        if d == 0:
            return i
        inv_denom[i] = 1.0 / d
        if i < n - 1:
            cp[i] = upper[i] * inv_denom[i]
    return -1


@nb.njit(cache=True)
def _solve(lower, cp, inv_denom, rhs, out):
    n = rhs.shape[0]
    out[0] = rhs[0] * inv_denom[0]
    for i in range(1, n):
        out[i] = (rhs[i] - lower[i - 1] * out[i - 1]) * inv_denom[i]
    for i in range(n - 2, -1, -1):
        out[i] = out[i] - cp[i] * out[i + 1]
    return out


class TridiagonalLU:
    """Factorization of a tridiagonal matrix for repeated solves.

    Parameters
    ----------
    lower, diag, upper : ndarray
        Sub-diagonal (n-1), diagonal (n) and super-diagonal (n-1) entries.
    """

    def __init__(self, lower, diag, upper):
        diag = np.ascontiguousarray(diag, dtype=np.complex128)
        lower = np.ascontiguousarray(lower, dtype=np.complex128)
        upper = np.ascontiguousarray(upper, dtype=np.complex128)
        n = diag.shape[0]
        if lower.shape != (n - 1,) or upper.shape != (n - 1,):
            raise ValueError("off-diagonals must have length n - 1")
        self.lower = lower
        self.cp = np.zeros(max(n - 1, 1), dtype=np.complex128)
        self.inv_denom = np.empty(n, dtype=np.complex128)
        bad = _factor(lower, diag, upper, self.cp, self.inv_denom)
        if bad >= 0:
            raise SingularSystemError(f"zero pivot at row {bad}")

    def solve(self, rhs, out=None):
        rhs = np.ascontiguousarray(rhs, dtype=np.complex128)
        if out is None:
            out = np.empty_like(rhs)
        return _solve(self.lower, self.cp, self.inv_denom, rhs, out)


def solve_tridiagonal(lower, diag, upper, rhs):
    """One-shot solve of a tridiagonal system."""
    return TridiagonalLU(lower, diag, upper).solve(rhs)
