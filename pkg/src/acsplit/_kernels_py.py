"""Pure numpy fallback for the compiled kernels."""

import numpy as np


def tridiag_substitute(lower, cprime, inv_denom, rhs):
    """In-place forward/back substitution for ``rhs`` of shape (n, lines)."""
    n = rhs.shape[0]
    rhs[0] *= inv_denom[0]
    for i in range(1, n):
        rhs[i] -= lower[i] * rhs[i - 1]
        rhs[i] *= inv_denom[i]
    for i in range(n - 2, -1, -1):
        rhs[i] -= cprime[i] * rhs[i + 1]
    return rhs
