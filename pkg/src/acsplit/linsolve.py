"""Linear solvers used by the time steppers.

* :func:`thomas_solve` and :func:`factored_solve_line_sweep` invert 1D
  tridiagonal factors exactly, line by line (compiled kernel when built).
* :class:`HelmholtzOperator` represents ``alpha v - dt div(kappa grad v)`` on
  one grid location; :func:`helmholtz_solve` solves it by preconditioned CG.
* :class:`GradDivOperator` is the coupled ``I - nu dt Lap - varpi dt grad div``
  system of the baseline schemes; :func:`coupled_graddiv_solve` uses CG.

Both operator classes can also factorize their sparse matrix once
(``method="direct"``); the steppers default to that because the matrix is
fixed for a run and thousands of solves follow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .mac import (
    CELL,
    MacGrid,
    ScalarField,
    VelocityField,
    apply_dirichlet,
    apply_dirichlet_velocity,
    boundary_values,
    cell_to_face,
    face_to_cell,
    fill_boundary,
    second_difference,
)

PIVOT_RTOL = 1e-14
DEFAULT_TOL = 1e-10


class SingularMatrixError(ArithmeticError):
    pass


@dataclass
class SolveStats:
    iterations: int
    final_residual: float
    converged: bool
    residuals: list = field(default_factory=list, repr=False)


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, stats: SolveStats):
        super().__init__(message)
        self.stats = stats


# -- tridiagonal --------------------------------------------------------------


@dataclass
class Tridiag:
    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.diag = np.asarray(self.diag, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        n = self.diag.size
        if self.lower.size != n - 1 or self.upper.size != n - 1:
            raise ValueError("lower/upper must have length n - 1")

    @property
    def n(self) -> int:
        return self.diag.size

    def dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.lower, -1) + np.diag(self.upper, 1)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        y = self.diag * x
        y[1:] += self.lower * x[:-1]
        y[:-1] += self.upper * x[1:]
        return y


def tridiag_factor(lower, diag, upper):
    """Elimination factors ``(lower_padded, cprime, inv_denom)`` for reuse."""
    n = diag.size
    scale = np.max(np.abs(diag)) if n else 0.0
    lo = np.zeros(n)
    lo[1:] = lower
    cp = np.zeros(n)
    inv = np.empty(n)
    denom = diag[0]
    for i in range(n):
        if i > 0:
            denom = diag[i] - lo[i] * cp[i - 1]
        if not abs(denom) > PIVOT_RTOL * scale:
            raise SingularMatrixError(f"zero pivot at row {i} (|pivot| = {abs(denom):.3e})")
        inv[i] = 1.0 / denom
        if i < n - 1:
            cp[i] = upper[i] * inv[i]
    return lo, cp, inv


def thomas_solve(m: Tridiag, rhs) -> np.ndarray:
    """Solve ``m x = rhs``; ``rhs`` may be (n,) or (n, k) for several right-hand sides."""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != m.n:
        raise ValueError(f"rhs length {rhs.shape[0]} does not match system size {m.n}")
    lo, cp, inv = tridiag_factor(m.lower, m.diag, m.upper)
    work = np.ascontiguousarray(rhs.reshape(m.n, -1), dtype=float).copy()
    kernels.tridiag_substitute(lo, cp, inv, work)
    return work.reshape(rhs.shape)


# -- sparse assembly -----------------------------------------------------------


def _grad_1d(n: int, h: float, normal: bool) -> sp.csr_matrix:
    """Unknowns along one axis -> flux points, homogeneous Dirichlet built in."""
    if normal:
        # n - 1 interior nodes -> n cells
        rows = np.arange(n)
        m = sp.lil_matrix((n, n - 1))
        for i in rows:
            if i <= n - 2:
                m[i, i] = 1.0 / h
            if i >= 1:
                m[i, i - 1] = -1.0 / h
        return m.tocsr()
    # n cells -> n + 1 faces, mirror ghost through the wall
    m = sp.lil_matrix((n + 1, n))
    m[0, 0] = 2.0 / h
    for i in range(1, n):
        m[i, i] = 1.0 / h
        m[i, i - 1] = -1.0 / h
    m[n, n - 1] = -2.0 / h
    return m.tocsr()


def _div_1d(n: int, h: float, normal: bool) -> sp.csr_matrix:
    """Flux points -> unknowns (plain difference)."""
    rows = n - 1 if normal else n
    return sp.diags([-np.ones(rows), np.ones(rows)], [0, 1], shape=(rows, rows + 1), format="csr") / h


def _kron_axis(sizes: list, axis: int, mat) -> sp.csr_matrix:
    out = None
    for a, s in enumerate(sizes):
        piece = mat if a == axis else sp.identity(s, format="csr")
        out = piece if out is None else sp.kron(out, piece, format="csr")
    return out.tocsr()


def _flatten_coefficient(kappa, shape) -> np.ndarray | float:
    if np.isscalar(kappa):
        return float(kappa)
    return np.broadcast_to(np.asarray(kappa, dtype=float), shape).ravel()


def second_difference_matrix(grid: MacGrid, loc: int, axis: int, kappa=1.0) -> sp.csr_matrix:
    """Sparse ``d_a(kappa d_a .)`` on the unknowns of ``loc`` (homogeneous BC)."""
    sizes = list(grid.interior_shape(loc))
    normal = axis == loc
    g1 = _grad_1d(grid.n[axis], grid.h[axis], normal)
    d1 = _div_1d(grid.n[axis], grid.h[axis], normal)
    grad = _kron_axis(sizes, axis, g1)
    flux_sizes = list(sizes)
    flux_sizes[axis] = g1.shape[0]
    div = _kron_axis(flux_sizes, axis, d1)
    kap = _flatten_coefficient(kappa, tuple(flux_sizes))
    if np.isscalar(kap):
        return (kap * (div @ grad)).tocsr()
    return (div @ sp.diags(kap) @ grad).tocsr()


def divergence_matrix(grid: MacGrid, k: int) -> sp.csr_matrix:
    """``D_k``: unknowns of component ``k`` -> cell centres."""
    sizes = list(grid.interior_shape(k))
    return _kron_axis(sizes, k, _grad_1d(grid.n[k], grid.h[k], True))


def gradient_matrix(grid: MacGrid, k: int) -> sp.csr_matrix:
    """``G_k = -D_k^T``: cell centres -> interior faces normal to ``k``."""
    return (-divergence_matrix(grid, k).T).tocsr()


# -- Krylov ------------------------------------------------------------------


def conjugate_gradient(A, b, x0=None, tol=DEFAULT_TOL, maxiter=None, precond=None):
    """Preconditioned CG for SPD ``A`` (sparse matrix or callable).

    Stops when ``||r|| <= tol * ||b||``.  ``precond`` is the inverse diagonal
    (array) or ``None``.
    """
    matvec = A if callable(A) else (lambda v: A @ v)
    b = np.asarray(b, dtype=float)
    n = b.size
    if maxiter is None:
        maxiter = 10 * n
    bnorm = float(np.linalg.norm(b))
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return np.zeros(n), SolveStats(0, 0.0, True, [0.0])
    r = b - matvec(x)
    z = r * precond if precond is not None else r
    pdir = z.copy()
    rz = float(r @ z)
    res = float(np.linalg.norm(r)) / bnorm
    history = [res]
    it = 0
    while res > tol and it < maxiter:
        Ap = matvec(pdir)
        pAp = float(pdir @ Ap)
        if pAp <= 0.0:
            break
        alpha = rz / pAp
        x += alpha * pdir
        r -= alpha * Ap
        it += 1
        res = float(np.linalg.norm(r)) / bnorm
        history.append(res)
        if res <= tol:
            break
        z = r * precond if precond is not None else r
        rz_new = float(r @ z)
        pdir = z + (rz_new / rz) * pdir
        rz = rz_new
    stats = SolveStats(it, res, res <= tol, history)
    return x, stats


# -- Helmholtz ----------------------------------------------------------------


class HelmholtzOperator:
    """``alpha v - dt sum_a d_a(kappa_a d_a v)`` on the unknowns of one location.

    ``kappa[a]`` is a non-negative scalar or an array at the flux points of
    axis ``a`` (cell centres for the location's normal axis).
    """

    def __init__(self, grid: MacGrid, loc: int, alpha: float, dt: float, kappa):
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        if dt < 0:
            raise ValueError("dt must be non-negative")
        if len(kappa) != grid.dim:
            raise ValueError(f"need {grid.dim} diffusion coefficients")
        for kap in kappa:
            if np.any(np.asarray(kap) < 0):
                raise ValueError("diffusion coefficients must be non-negative")
        self.grid = grid
        self.loc = loc
        self.alpha = float(alpha)
        self.dt = float(dt)
        self.kappa = tuple(kappa)
        self._matrix = None
        self._lu = None

    @property
    def matrix(self) -> sp.csc_matrix:
        if self._matrix is None:
            g = self.grid
            m = self.alpha * sp.identity(g.size(self.loc), format="csr")
            for a, kap in enumerate(self.kappa):
                if np.isscalar(kap) and kap == 0:
                    continue
                m = m - self.dt * second_difference_matrix(g, self.loc, a, kap)
            self._matrix = m.tocsc()
        return self._matrix

    def apply(self, v: ScalarField) -> np.ndarray:
        """Operator applied to a ghost-filled field, at its unknowns."""
        out = self.alpha * v.interior
        for a, kap in enumerate(self.kappa):
            if np.isscalar(kap) and kap == 0:
                continue
            out = out - self.dt * second_difference(v, a, kap)
        return out

    def boundary_rhs(self, rhs: np.ndarray, bc_field: ScalarField) -> np.ndarray:
        """Move the Dirichlet contribution of ``bc_field`` to the right-hand side."""
        probe = bc_field.copy()
        probe.interior = 0.0
        return rhs - self.apply(probe)

    def solve_interior(self, b: np.ndarray, method: str = "direct", x0=None, tol=DEFAULT_TOL,
                       maxiter=None) -> tuple[np.ndarray, SolveStats]:
        shape = b.shape
        if method == "direct":
            if self._lu is None:
                self._lu = spla.splu(self.matrix)
            x = self._lu.solve(b.ravel())
            return x.reshape(shape), SolveStats(1, 0.0, True)
        if method != "cg":
            raise ValueError(f"unknown solve method {method!r}")
        diag = self.matrix.diagonal()
        x, stats = conjugate_gradient(
            self.matrix, b.ravel(), None if x0 is None else np.ravel(x0), tol, maxiter, 1.0 / diag
        )
        if not stats.converged:
            raise ConvergenceError(
                f"CG did not converge in {stats.iterations} iterations (residual {stats.final_residual:.2e})",
                stats,
            )
        return x.reshape(shape), stats

    def solve(self, rhs: np.ndarray, bc_field: ScalarField, method: str = "direct", x0=None,
              tol=DEFAULT_TOL, maxiter=None) -> tuple[ScalarField, SolveStats]:
        """Solve with Dirichlet data taken from ``bc_field``'s boundary/ghost entries.

        ``bc_field`` must have had its boundary filled with the interior set
        to zero (see :func:`acsplit.mac.fill_boundary`).  The returned field
        has its ghosts recomputed.
        """
        b = self.boundary_rhs(rhs, bc_field)
        x, stats = self.solve_interior(b, method, x0, tol, maxiter)
        out = bc_field.copy()
        out.interior = x
        _refresh_ghosts(out, bc_field)
        return out, stats


def _refresh_ghosts(out: ScalarField, bc_only: ScalarField) -> None:
    """Recompute mirror ghosts of ``out`` given ghosts computed for a zero interior."""
    g = out.grid
    d = out.data
    nd = g.dim
    for a in sorted(range(nd), key=lambda a: a != out.loc):
        m = g.n[a]
        lo = [slice(None)] * nd
        hi = [slice(None)] * nd
        lo1 = [slice(None)] * nd
        hi1 = [slice(None)] * nd
        if a == out.loc:
            lo[a], lo1[a] = 0, 2
            hi[a], hi1[a] = m + 2, m
            b_lo = [slice(None)] * nd
            b_hi = [slice(None)] * nd
            b_lo[a], b_hi[a] = 1, m + 1
            d[tuple(lo)] = 2.0 * d[tuple(b_lo)] - d[tuple(lo1)]
            d[tuple(hi)] = 2.0 * d[tuple(b_hi)] - d[tuple(hi1)]
        else:
            lo[a], lo1[a] = 0, 1
            hi[a], hi1[a] = m + 1, m
            # bc ghost + bc first layer is twice the wall trace
            b = bc_only.data
            d[tuple(lo)] = b[tuple(lo)] + b[tuple(lo1)] - d[tuple(lo1)]
            d[tuple(hi)] = b[tuple(hi)] + b[tuple(hi1)] - d[tuple(hi1)]


def _iteration_cap(grid: MacGrid, ndof: int) -> int:
    return int(10 * round(ndof ** (1.0 / grid.dim)))


def helmholtz_solve(alpha, dt, kappa, rhs: ScalarField, bc=None, t=0.0, tol=DEFAULT_TOL,
                    maxiter=None) -> tuple[ScalarField, SolveStats]:
    """Solve ``alpha v - dt div(kappa grad v) = rhs`` by Jacobi-preconditioned CG.

    ``rhs.interior`` holds the right-hand side; ``bc(X, t)`` gives the
    Dirichlet values of ``v`` (``None``: homogeneous).  Raises
    :class:`ConvergenceError` when the iteration cap is reached.
    """
    g = rhs.grid
    op = HelmholtzOperator(g, rhs.loc, alpha, dt, kappa)
    bc_field = g.scalar(rhs.loc)
    apply_dirichlet(bc_field, bc, t)
    if maxiter is None:
        maxiter = _iteration_cap(g, g.size(rhs.loc))
    return op.solve(rhs.interior, bc_field, method="cg", tol=tol, maxiter=maxiter)


# -- factored line solves -------------------------------------------------------


class LineSolver:
    """Exact inverse of ``alpha I - coeff d_aa`` along every grid line of one axis."""

    def __init__(self, grid: MacGrid, loc: int, axis: int, alpha: float, coeff: float):
        if coeff < 0:
            raise ValueError("line-solve coefficient must be non-negative")
        self.grid = grid
        self.loc = loc
        self.axis = axis
        self.alpha = float(alpha)
        self.coeff = float(coeff)
        n = grid.n[axis]
        h2 = grid.h[axis] ** 2
        self.normal = axis == loc
        m = n - 1 if self.normal else n
        c = self.coeff / h2
        diag = np.full(m, self.alpha + 2.0 * c)
        if not self.normal:
            diag[0] += c
            diag[-1] += c
        off = np.full(m - 1, -c)
        self.tridiag = Tridiag(off, diag, off.copy())
        self._factors = tridiag_factor(self.tridiag.lower, self.tridiag.diag, self.tridiag.upper)

    def solve(self, rhs: np.ndarray, lo=None, hi=None) -> np.ndarray:
        """Solve for interior-shaped ``rhs``.

        ``lo``/``hi`` are the Dirichlet data at both ends of every line:
        boundary-face values on the normal axis, wall traces otherwise;
        arrays of interior shape with length one along the axis, or ``None``.
        """
        a = self.axis
        h2 = self.grid.h[a] ** 2
        weight = self.coeff / h2 * (1.0 if self.normal else 2.0)
        b = np.moveaxis(np.array(rhs, dtype=float, copy=True), a, 0)
        if lo is not None:
            b[0] += weight * np.moveaxis(lo, a, 0)[0]
        if hi is not None:
            b[-1] += weight * np.moveaxis(hi, a, 0)[0]
        shape = b.shape
        work = np.ascontiguousarray(b.reshape(shape[0], -1))
        kernels.tridiag_substitute(*self._factors, work)
        return np.moveaxis(work.reshape(shape), 0, a)


def line_boundary_data(grid: MacGrid, loc: int, axis: int, values) -> tuple:
    """Restrict :func:`acsplit.mac.boundary_values` output to the interior of the other axes."""
    if values is None or values[axis] is None:
        return None, None
    sl = list(grid.interior(loc))
    sl[axis] = slice(None)
    lo, hi = values[axis]
    return lo[tuple(sl)], hi[tuple(sl)]


def factored_solve_line_sweep(axis: int, alpha: float, coeff: float, field: ScalarField, bc=None,
                              t: float = 0.0) -> ScalarField:
    """Solve ``(alpha I - coeff d_aa) v = field`` with one tridiagonal solve per line.

    ``field.interior`` is the right-hand side; ``bc(X, t)`` the Dirichlet
    data for ``v``.  ``coeff = 0`` returns ``field / alpha`` in the interior.
    """
    g = field.grid
    solver = LineSolver(g, field.loc, axis, alpha, coeff)
    values = boundary_values(g, field.loc, bc, t)
    lo, hi = line_boundary_data(g, field.loc, axis, values)
    out = g.scalar(field.loc)
    out.interior = solver.solve(field.interior, lo, hi)
    fill_boundary(out, values)
    return out


# -- coupled grad-div ---------------------------------------------------------------


class GradDivOperator:
    """``u - nu_dt Lap u - graddiv_dt grad(varpi div u)`` on all components at once."""

    def __init__(self, grid: MacGrid, nu_dt: float, graddiv_dt: float, varpi=1.0):
        if nu_dt < 0 or graddiv_dt < 0:
            raise ValueError("coefficients must be non-negative")
        self.grid = grid
        self.nu_dt = float(nu_dt)
        self.graddiv_dt = float(graddiv_dt)
        self.varpi = varpi if np.isscalar(varpi) else np.asarray(varpi, dtype=float)
        self.sizes = [grid.size(k) for k in range(grid.dim)]
        self._matrix = None
        self._lu = None

    @property
    def matrix(self) -> sp.csc_matrix:
        if self._matrix is None:
            g = self.grid
            w = self.varpi if np.isscalar(self.varpi) else sp.diags(self.varpi.ravel())
            D = [divergence_matrix(g, k) for k in range(g.dim)]
            blocks = []
            for i in range(g.dim):
                row = []
                Gi = (-D[i].T).tocsr()
                for j in range(g.dim):
                    b = -self.graddiv_dt * (Gi @ (w * D[j] if np.isscalar(w) else w @ D[j]))
                    if i == j:
                        lap = sum(second_difference_matrix(g, i, a) for a in range(g.dim))
                        b = b + sp.identity(self.sizes[i]) - self.nu_dt * lap
                    row.append(b)
                blocks.append(row)
            self._matrix = sp.bmat(blocks, format="csc")
        return self._matrix

    def apply(self, u: VelocityField) -> list:
        g = self.grid
        div = sum(face_to_cell(u[k]) for k in range(g.dim))
        wdiv = self.varpi * div
        out = []
        for k in range(g.dim):
            lap = sum(second_difference(u[k], a) for a in range(g.dim))
            out.append(u[k].interior - self.nu_dt * lap - self.graddiv_dt * cell_to_face(wdiv, k, g.h[k]))
        return out

    def pack(self, arrays) -> np.ndarray:
        return np.concatenate([np.ravel(a) for a in arrays])

    def unpack(self, x: np.ndarray) -> list:
        out, start = [], 0
        for k, s in enumerate(self.sizes):
            out.append(x[start:start + s].reshape(self.grid.interior_shape(k)))
            start += s
        return out

    def solve(self, rhs: list, bc_field: VelocityField, method: str = "direct", x0=None,
              tol=DEFAULT_TOL, maxiter=None) -> tuple[VelocityField, SolveStats]:
        probe = bc_field.copy()
        for c in probe:
            c.interior = 0.0
        b = self.pack(rhs) - self.pack(self.apply(probe))
        if method == "direct":
            if self._lu is None:
                self._lu = spla.splu(self.matrix)
            x = self._lu.solve(b)
            stats = SolveStats(1, 0.0, True)
        elif method == "cg":
            diag = self.matrix.diagonal()
            x, stats = conjugate_gradient(self.matrix, b, None if x0 is None else self.pack(x0), tol,
                                          maxiter, 1.0 / diag)
            if not stats.converged:
                raise ConvergenceError(
                    f"CG did not converge in {stats.iterations} iterations "
                    f"(residual {stats.final_residual:.2e})", stats)
        else:
            raise ValueError(f"unknown solve method {method!r}")
        out = bc_field.copy()
        for c, bc_c, xi in zip(out, bc_field, self.unpack(x)):
            c.interior = xi
            _refresh_ghosts(c, bc_c)
        return out, stats


def coupled_graddiv_solve(nu_dt, chi_dt, rhs: VelocityField, bc=None, t=0.0, tol=DEFAULT_TOL,
                          maxiter=None, varpi=1.0) -> tuple[VelocityField, SolveStats]:
    """Solve ``(I - nu_dt Lap - chi_dt grad(varpi div)) u = rhs`` by CG on all components."""
    g = rhs.grid
    op = GradDivOperator(g, nu_dt, chi_dt, varpi)
    bc_field = g.velocity()
    apply_dirichlet_velocity(bc_field, bc, t)
    if maxiter is None:
        maxiter = _iteration_cap(g, sum(op.sizes))
    return op.solve([c.interior for c in rhs], bc_field, method="cg", tol=tol, maxiter=maxiter)


__all__ = [
    "CELL",
    "ConvergenceError",
    "GradDivOperator",
    "HelmholtzOperator",
    "LineSolver",
    "SingularMatrixError",
    "SolveStats",
    "Tridiag",
    "conjugate_gradient",
    "coupled_graddiv_solve",
    "divergence_matrix",
    "factored_solve_line_sweep",
    "gradient_matrix",
    "helmholtz_solve",
    "second_difference_matrix",
    "thomas_solve",
]
