import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acsplit.linsolve import (
    ConvergenceError,
    GradDivOperator,
    HelmholtzOperator,
    LineSolver,
    SingularMatrixError,
    Tridiag,
    conjugate_gradient,
    coupled_graddiv_solve,
    divergence_matrix,
    factored_solve_line_sweep,
    gradient_matrix,
    helmholtz_solve,
    second_difference_matrix,
    thomas_solve,
)
from acsplit.mac import (
    CELL,
    MacGrid,
    apply_dirichlet,
    apply_dirichlet_velocity,
    div_kappa_grad,
    divergence,
    face_to_cell,
    gradient,
    second_difference,
)


def trace(X, t):
    return np.sin(2 * X[0] + 1) * np.cos(X[-1] - t) + 0.5


def vtrace(k, X, t):
    return (k + 1) * np.cos(X[0] + 2 * X[-1] + t)


# -- tridiagonal ------------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 30), k=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
def test_thomas_matches_dense(n, k, seed):
    rng = np.random.default_rng(seed)
    lower, upper = rng.uniform(-1, 1, n - 1), rng.uniform(-1, 1, n - 1)
    diag = 2.5 + rng.uniform(0, 1, n)
    m = Tridiag(lower, diag, upper)
    rhs = rng.standard_normal((n, k))
    x = thomas_solve(m, rhs)
    assert np.allclose(x, np.linalg.solve(m.dense(), rhs), atol=1e-12, rtol=1e-12)
    assert np.allclose(m.matvec(x[:, 0]), rhs[:, 0], atol=1e-12)


def test_thomas_single_rhs_shape():
    m = Tridiag([-1.0, -1.0], [2.0, 2.0, 2.0], [-1.0, -1.0])
    x = thomas_solve(m, [1.0, 0.0, 1.0])
    assert x.shape == (3,)
    assert np.allclose(x, [1.0, 1.0, 1.0])


def test_thomas_singular_pivot():
    m = Tridiag([1.0], [0.0, 1.0], [1.0])
    with pytest.raises(SingularMatrixError):
        thomas_solve(m, [1.0, 1.0])
    # [[1, 1], [1, 1]] hits a zero pivot in the second row
    with pytest.raises(SingularMatrixError):
        thomas_solve(Tridiag([1.0], [1.0, 1.0], [1.0]), [1.0, 2.0])


def test_tridiag_validation():
    with pytest.raises(ValueError):
        Tridiag([1.0, 2.0], [1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        thomas_solve(Tridiag([0.0], [1.0, 1.0], [0.0]), np.ones(3))


# -- sparse operators ----------------------------------------------------------------


@pytest.mark.parametrize("dim", [2, 3])
def test_sparse_operators_match_field_operators(dim):
    rng = np.random.default_rng(dim)
    g = MacGrid(tuple(range(4, 4 + dim)))
    u = g.velocity()
    for c in u:
        c.interior = rng.standard_normal(c.interior.shape)
    apply_dirichlet_velocity(u, None)
    div = sum(divergence_matrix(g, k) @ u[k].interior.ravel() for k in range(dim))
    assert np.allclose(div, divergence(u).interior.ravel(), atol=1e-12)
    p = g.scalar(CELL)
    p.interior = rng.standard_normal(p.interior.shape)
    gp = gradient(p)
    for k in range(dim):
        G = gradient_matrix(g, k)
        assert np.allclose(G @ p.interior.ravel(), gp[k].interior.ravel(), atol=1e-12)
        assert np.allclose(G.toarray(), -divergence_matrix(g, k).toarray().T)
        for a in range(dim):
            S = second_difference_matrix(g, k, a)
            assert np.allclose(S @ u[k].interior.ravel(), second_difference(u[k], a).ravel(), atol=1e-9)


# -- conjugate gradient --------------------------------------------------------------


def test_cg_spd_system():
    rng = np.random.default_rng(0)
    B = rng.standard_normal((30, 30))
    A = B @ B.T + 30 * np.eye(30)
    b = rng.standard_normal(30)
    x, stats = conjugate_gradient(A, b, tol=1e-12)
    assert stats.converged
    assert np.allclose(x, np.linalg.solve(A, b), atol=1e-9)
    x2, _ = conjugate_gradient(lambda v: A @ v, b, tol=1e-12, precond=1.0 / np.diag(A))
    assert np.allclose(x2, x, atol=1e-9)


def test_cg_zero_rhs():
    x, stats = conjugate_gradient(np.eye(4), np.zeros(4))
    assert np.all(x == 0.0) and stats.converged and stats.iterations == 0


# -- Helmholtz -----------------------------------------------------------------------


@pytest.mark.parametrize("dim,loc", [(2, CELL), (2, 0), (2, 1), (3, 2)])
@pytest.mark.parametrize("method", ["direct", "cg"])
def test_helmholtz_recovers_field(dim, loc, method):
    rng = np.random.default_rng(1)
    g = MacGrid(tuple([6, 7, 5][:dim]))
    kappa = [0.3, 1.1, 0.7][:dim]
    alpha, dt = 1.5, 0.2
    v = g.scalar(loc)
    v.interior = rng.standard_normal(v.interior.shape)
    apply_dirichlet(v, trace, 0.3)
    rhs = alpha * v.interior - dt * div_kappa_grad(v, kappa).interior
    op = HelmholtzOperator(g, loc, alpha, dt, kappa)
    bc = g.scalar(loc)
    apply_dirichlet(bc, trace, 0.3)
    out, _ = op.solve(rhs, bc, method=method, tol=1e-13)
    assert np.max(np.abs(out.data - v.data)) < 1e-9


def test_helmholtz_solve_function_and_cap():
    g = MacGrid.uniform(2, 8)
    v = g.sample(0, trace, 0.0)
    apply_dirichlet(v, trace, 0.0)
    r = g.scalar(0)
    r.interior = v.interior - 0.1 * div_kappa_grad(v, (1.0, 2.0)).interior
    out, stats = helmholtz_solve(1.0, 0.1, (1.0, 2.0), r, bc=trace, t=0.0, tol=1e-13)
    assert stats.converged
    assert np.max(np.abs(out.interior - v.interior)) < 1e-10
    with pytest.raises(ConvergenceError) as info:
        helmholtz_solve(1.0, 10.0, (1.0, 2.0), r, bc=trace, t=0.0, tol=1e-14, maxiter=1)
    assert not info.value.stats.converged


# -- factored line solves --------------------------------------------------------------


@pytest.mark.parametrize("loc,axis", [(0, 0), (0, 1), (1, 0), (1, 1), (CELL, 0)])
def test_line_sweep_recovers_field(loc, axis):
    rng = np.random.default_rng(2)
    g = MacGrid((7, 6))
    alpha, coeff = 1.0, 0.05
    v = g.scalar(loc)
    v.interior = rng.standard_normal(v.interior.shape)
    apply_dirichlet(v, trace, 0.0)
    f = g.scalar(loc)
    f.interior = alpha * v.interior - coeff * second_difference(v, axis)
    out = factored_solve_line_sweep(axis, alpha, coeff, f, bc=trace, t=0.0)
    assert np.max(np.abs(out.interior - v.interior)) < 1e-12


def test_line_solver_matches_dense_matrix():
    g = MacGrid((5, 4))
    ls = LineSolver(g, 1, 0, 2.0, 0.3)
    rhs = np.arange(g.size(1), dtype=float).reshape(g.interior_shape(1))
    out = ls.solve(rhs)
    A = ls.tridiag.dense()
    assert np.allclose(out, np.linalg.solve(A, rhs), atol=1e-13)
    with pytest.raises(ValueError):
        LineSolver(g, 1, 0, 1.0, -0.1)


def test_line_solve_zero_coefficient():
    g = MacGrid.uniform(2, 4)
    f = g.sample(0, trace, 0.0)
    out = factored_solve_line_sweep(1, 2.0, 0.0, f)
    assert np.allclose(out.interior, f.interior / 2.0)


# -- coupled grad-div -----------------------------------------------------------------------


def graddiv_apply(u, nu_dt, gd_dt, w):
    g = u.grid
    div = sum(face_to_cell(u[k]) for k in range(g.dim))
    out = []
    for k in range(g.dim):
        lap = sum(second_difference(u[k], a) for a in range(g.dim))
        out.append(u[k].interior - nu_dt * lap - gd_dt * np.diff(w * div, axis=k) / g.h[k])
    return out


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("method", ["direct", "cg"])
def test_graddiv_recovers_field(dim, method):
    rng = np.random.default_rng(3)
    g = MacGrid.uniform(dim, 5)
    u = g.velocity()
    for c in u:
        c.interior = rng.standard_normal(c.interior.shape)
    apply_dirichlet_velocity(u, vtrace, 0.1)
    rhs = graddiv_apply(u, 0.05, 0.2, 1.7)
    op = GradDivOperator(g, 0.05, 0.2, 1.7)
    bc = g.velocity()
    apply_dirichlet_velocity(bc, vtrace, 0.1)
    out, _ = op.solve(rhs, bc, method=method, tol=1e-13)
    for a, b in zip(out, u):
        assert np.max(np.abs(a.data - b.data)) < 1e-9


def test_coupled_graddiv_solve_cg():
    g = MacGrid.uniform(2, 6)
    u = g.sample_velocity(vtrace, 0.0)
    apply_dirichlet_velocity(u, vtrace, 0.0)
    r = g.velocity()
    for c, val in zip(r, graddiv_apply(u, 0.1, 0.3, 1.0)):
        c.interior = val
    out, stats = coupled_graddiv_solve(0.1, 0.3, r, bc=vtrace, t=0.0, tol=1e-13)
    assert stats.converged
    assert max(np.max(np.abs(a.interior - b.interior)) for a, b in zip(out, u)) < 1e-10
