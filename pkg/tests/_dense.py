"""Dense reference operators for homogeneous-Dirichlet MAC fields.

Built from one-dimensional stencils with numpy only, independently of the
sparse assembly in ``acsplit.linsolve``.  Unknown ordering is C-order over
the interior nodes of each location, matching ``field.interior.ravel()``.
"""

from functools import reduce

import numpy as np

from acsplit.mac import CELL, apply_dirichlet_velocity, fill_zero_gradient


def _div1(n, h):
    """Cells (n) from interior nodes (n - 1); boundary nodes are zero."""
    m = np.zeros((n, n - 1))
    for i in range(n):
        if i <= n - 2:
            m[i, i] += 1.0 / h
        if i >= 1:
            m[i, i - 1] -= 1.0 / h
    return m


def _lap_tangential(n, h):
    """Cell-aligned second difference with mirror ghosts (zero wall value)."""
    m = (np.diag(-2.0 * np.ones(n)) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1))
    m[0, 0] = m[-1, -1] = -3.0
    return m / h**2


def _kron(mats):
    return reduce(np.kron, mats)


class Dense:
    def __init__(self, grid):
        self.grid = grid
        self.dim = grid.dim
        self.n = grid.n
        self.h = grid.h

    def shape(self, loc):
        return tuple(m - 1 if a == loc else m for a, m in enumerate(self.n))

    def size(self, loc):
        return int(np.prod(self.shape(loc)))

    def _eye(self, a, loc):
        return np.eye(self.n[a] - 1 if a == loc else self.n[a])

    def D(self, k):
        return _kron([_div1(self.n[a], self.h[a]) if a == k else self._eye(a, k) for a in range(self.dim)])

    def G(self, k):
        return -self.D(k).T

    def S(self, k, axis):
        """Second difference along ``axis`` on component ``k``."""
        mats = []
        for a in range(self.dim):
            if a != axis:
                mats.append(self._eye(a, k))
            elif a == k:
                d = _div1(self.n[a], self.h[a])
                mats.append(-d.T @ d)
            else:
                mats.append(_lap_tangential(self.n[a], self.h[a]))
        return _kron(mats)

    def L(self, k):
        return sum(self.S(k, a) for a in range(self.dim))

    def I(self, loc):
        return np.eye(self.size(loc))

    def GD(self, k, j, w=1.0):
        """``G_k w D_j`` mapping component ``j`` to component ``k``."""
        return w * self.G(k) @ self.D(j)

    def div(self, u):
        return sum(self.D(k) @ u[k] for k in range(self.dim))


def flat(field):
    return field.interior.ravel().copy()


def flat_u(u):
    return [flat(c) for c in u]


def solve_blocks(blocks, rhs, sizes):
    """Solve a block system given ``{(i, j): matrix}`` and per-row right-hand sides."""
    offs = np.concatenate([[0], np.cumsum(sizes)])
    m = np.zeros((offs[-1], offs[-1]))
    for (i, j), a in blocks.items():
        m[offs[i]:offs[i + 1], offs[j]:offs[j + 1]] += a
    x = np.linalg.solve(m, np.concatenate(rhs))
    return [x[offs[i]:offs[i + 1]] for i in range(len(sizes))]


def random_fields(grid, rng):
    u = grid.velocity()
    for c in u:
        c.interior = rng.standard_normal(c.interior.shape)
    apply_dirichlet_velocity(u, None)
    p = grid.scalar(CELL)
    p.interior = rng.standard_normal(p.interior.shape)
    fill_zero_gradient(p)
    return u, p


def random_forcing(grid, rng):
    """Time-dependent forcing ``F_k (1 + t)`` with random spatial profiles."""
    prof = [rng.standard_normal(grid.shape(k)) for k in range(grid.dim)]

    def forcing(k, X, t):
        return prof[k] * (1.0 + t)

    def at(k, t):
        return (prof[k][grid.interior(k)] * (1.0 + t)).ravel()

    return forcing, at
