# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled batched tridiagonal substitution."""

cimport cython


def tridiag_substitute(const double[::1] lower, const double[::1] cprime,
                       const double[::1] inv_denom, double[:, ::1] rhs):
    """In-place forward/back substitution for ``rhs`` of shape (n, lines)."""
    cdef Py_ssize_t n = rhs.shape[0]
    cdef Py_ssize_t m = rhs.shape[1]
    cdef Py_ssize_t i, j
    cdef double a, w, c
    with nogil:
        w = inv_denom[0]
        for j in range(m):
            rhs[0, j] = rhs[0, j] * w
        for i in range(1, n):
            a = lower[i]
            w = inv_denom[i]
            for j in range(m):
                rhs[i, j] = (rhs[i, j] - a * rhs[i - 1, j]) * w
        for i in range(n - 2, -1, -1):
            c = cprime[i]
            for j in range(m):
                rhs[i, j] = rhs[i, j] - c * rhs[i + 1, j]
