"""Artificial-compressibility time steppers and their energy functionals.

Every stepper advances a :class:`SimState` by one ``dt`` in place.  Time
levels are stored in :class:`Series` objects keyed by the level index, so the
code below reads like the recurrences it implements (``u0[n + 1]``,
``p[n - 0.5]`` ...).

Catalogue
---------
``ac1``               first-order AC with implicit (coupled) grad-div
``gs2d`` / ``gs3d``   Gauss-Seidel splitting of grad-div
``gs3d_modified``     3D Gauss-Seidel with the stabilising perturbation
``jacobi2d``          Jacobi splitting, factor 1
``jacobi_nd``         Jacobi splitting with own-direction factor ``d``
``dirsplit1``         direction-split (ADI) Crank-Nicolson variant, 2D
``dirsplit_defect2``  second-order defect-corrected direction splitting, 2D
``bdf2_bootstrap``    BDF2 with a first-order bootstrap for the pressure
``defect{1,2,3}_split``    cascaded defect correction, decoupled grad-div
``defect{1,2,3}_coupled``  same cascade with the coupled grad-div solve

Sign conventions: ``G_k`` is the interior-face gradient and ``D_j`` the
face-to-cell difference, so ``grad(varpi div u)`` has components
``G_k(varpi sum_j D_j u_j)``.  Decoupling moves every ``j > k`` cross term of
row ``k`` to the previous level.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .linsolve import (
    GradDivOperator,
    HelmholtzOperator,
    LineSolver,
    line_boundary_data,
    second_difference_matrix,
)
from .mac import (
    CELL,
    MacGrid,
    ScalarField,
    VelocityField,
    advect,
    boundary_values,
    cell_to_face,
    face_to_cell,
    fill_boundary,
    fill_zero_gradient,
    second_difference,
)
from .manufactured import Problem


#: ``matched``: stage k+1 carries ``C(u_k^m - u_k^{m-1}) / dt`` with the same
#: levels as stage k's lagged term, so the mixed terms cancel in the composite.
#: ``verbatim``: the undivided increment plus ``C du_k`` at the newest level.
#: ``none``: the undivided increment only.
MIXED_CORRECTIONS = ("matched", "verbatim", "none")


class SchemeDivergenceError(FloatingPointError):
    """Non-finite values appeared during a step."""


class SchemeConfigError(ValueError):
    pass


@dataclass
class SchemeConfig:
    """Physical and algorithmic parameters of one run.

    ``lam`` may be a cell array for the grad-div splitting schemes; the
    direction-splitting schemes need it constant.
    """

    dim: int = 2
    dt: float = 0.1
    nu: float = 1.0
    lam: float | np.ndarray = 0.0
    chi: float = 1.0
    scheme: str = "gs2d"
    nonlinear: bool = False
    solver: str = "direct"
    #: mixed-derivative source of the split defect stages, see :data:`MIXED_CORRECTIONS`
    mixed_correction: str = "matched"
    #: pressure in the second direction-splitting stage's momentum: ``incremented``
    #: uses ``p^{n-1/2} + (pt^{n+1/2} - pt^{n-1/2})``, ``verbatim`` uses ``p^{n-1/2}``
    dirsplit_pressure: str = "incremented"

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise SchemeConfigError(f"dim must be 2 or 3, got {self.dim}")
        if not self.dt > 0:
            raise SchemeConfigError(f"dt must be positive, got {self.dt}")
        if not self.nu > 0:
            raise SchemeConfigError(f"nu must be positive, got {self.nu}")
        if not self.chi > 0:
            raise SchemeConfigError(f"chi must be positive, got {self.chi}")
        if np.any(np.asarray(self.lam) < 0):
            raise SchemeConfigError("lambda must be non-negative")
        if self.scheme not in SCHEMES:
            raise SchemeConfigError(f"unknown scheme {self.scheme!r}; choose from {sorted(SCHEMES)}")
        info = SCHEMES[self.scheme]
        if self.dim not in info.dims:
            raise SchemeConfigError(f"scheme {self.scheme} supports dim {info.dims}, got {self.dim}")
        if info.constant_varpi and not np.isscalar(self.lam):
            raise SchemeConfigError(f"scheme {self.scheme} needs a constant lambda")
        if self.mixed_correction not in MIXED_CORRECTIONS:
            raise SchemeConfigError(
                f"mixed_correction must be one of {MIXED_CORRECTIONS}, got {self.mixed_correction!r}")
        if self.dirsplit_pressure not in ("incremented", "verbatim"):
            raise SchemeConfigError(
                f"dirsplit_pressure must be 'incremented' or 'verbatim', got {self.dirsplit_pressure!r}")
        if self.solver not in ("direct", "cg"):
            raise SchemeConfigError(f"solver must be 'direct' or 'cg', got {self.solver!r}")

    @property
    def varpi(self):
        lam = self.lam if np.isscalar(self.lam) else np.asarray(self.lam, dtype=float)
        return lam + self.chi


class Series(dict):
    """Time levels of one quantity, keyed by (possibly half-integer) level."""

    def prune(self, keep_from: float) -> None:
        for key in [k for k in self if k < keep_from]:
            del self[key]


@dataclass
class SimState:
    """Current and historical levels of one simulation.

    ``n`` counts completed calls of the stepper; ``series`` maps names such as
    ``"u"``, ``"p"``, ``"u0"``, ``"du0"`` to :class:`Series`.
    """

    grid: MacGrid
    n: int = 0
    series: dict = field(default_factory=dict)
    cache: dict = field(default_factory=dict, repr=False)

    def __getitem__(self, name: str) -> Series:
        return self.series.setdefault(name, Series())


@dataclass
class EnergyBreakdown:
    terms: dict
    heuristic: bool = False

    @property
    def total(self) -> float:
        return float(sum(self.terms.values()))


# -- context helpers ---------------------------------------------------------------


class _Ctx:
    """Per-step helper bundling grid, parameters, data and cached operators."""

    def __init__(self, state: SimState, config: SchemeConfig, problem: Problem | None):
        self.state = state
        self.cfg = config
        self.grid = state.grid
        self.dim = state.grid.dim
        self.h = state.grid.h
        self.dt = config.dt
        self.nu = config.nu
        self.varpi = config.varpi
        self.problem = problem or Problem()

    # data
    def forcing(self, k: int, t: float) -> np.ndarray | float:
        f = self.problem.forcing
        if f is None:
            return 0.0
        X = self.grid.mesh(k)
        vals = np.broadcast_to(f(k, X, t), self.grid.shape(k))
        return vals[self.grid.interior(k)]

    def bc_values(self, k: int, t: float, homogeneous: bool = False, trace=None):
        if trace is None:
            trace = None if homogeneous else self.problem.velocity_bc
        if trace is None:
            return [None] * self.dim
        return boundary_values(self.grid, k, lambda X, s: trace(k, X, s), t)

    def bc_field(self, k: int, values) -> ScalarField:
        f = self.grid.scalar(k)
        fill_boundary(f, values)
        return f

    def velocity_with_bc(self, arrays, t: float, homogeneous: bool = False) -> VelocityField:
        comps = []
        for k, a in enumerate(arrays):
            c = self.grid.scalar(k)
            c.interior = a
            fill_boundary(c, self.bc_values(k, t, homogeneous))
            comps.append(c)
        return VelocityField(comps)

    def nonlinear(self, u: VelocityField) -> list:
        if not self.cfg.nonlinear:
            return [0.0] * self.dim
        return [c.interior for c in advect(u)]

    # operators
    def D(self, v: ScalarField) -> np.ndarray:
        return face_to_cell(v)

    def G(self, q: np.ndarray, k: int) -> np.ndarray:
        return cell_to_face(q, k, self.h[k])

    def wG(self, q: np.ndarray, k: int) -> np.ndarray:
        """``G_k(varpi q)``."""
        return cell_to_face(self.varpi * q, k, self.h[k])

    def helmholtz(self, k: int, alpha: float, own: float) -> HelmholtzOperator:
        """``alpha I - dt(nu Lap + own * G_k varpi D_k)`` on component ``k``."""
        key = ("helm", k, alpha, own, self.dt, self.nu, self.cfg.chi, id(self.cfg.lam))
        cache = self.state.cache
        if key not in cache:
            kappa = [self.nu] * self.dim
            kappa[k] = self.nu + own * self.varpi
            cache[key] = HelmholtzOperator(self.grid, k, alpha, self.dt, kappa)
        return cache[key]

    def solve_component(self, k, alpha, own, rhs, t, homogeneous=False, x0=None) -> ScalarField:
        op = self.helmholtz(k, alpha, own)
        bc = self.bc_field(k, self.bc_values(k, t, homogeneous))
        out, _ = op.solve(rhs, bc, method=self.cfg.solver, x0=x0)
        return out

    def graddiv(self) -> GradDivOperator:
        key = ("graddiv", self.dt, self.nu, self.cfg.chi, id(self.cfg.lam))
        cache = self.state.cache
        if key not in cache:
            cache[key] = GradDivOperator(self.grid, self.nu * self.dt, self.dt, self.varpi)
        return cache[key]

    def solve_coupled(self, rhs: list, t: float, homogeneous=False, x0=None) -> VelocityField:
        bc = VelocityField([self.bc_field(k, self.bc_values(k, t, homogeneous)) for k in range(self.dim)])
        out, _ = self.graddiv().solve(rhs, bc, method=self.cfg.solver, x0=x0)
        return out

    def line_solver(self, k: int, axis: int, coeff: float) -> LineSolver:
        key = ("line", k, axis, coeff)
        cache = self.state.cache
        if key not in cache:
            cache[key] = LineSolver(self.grid, k, axis, 1.0, coeff)
        return cache[key]

    def pressure_field(self, values: np.ndarray) -> ScalarField:
        p = self.grid.scalar(CELL)
        p.interior = values
        fill_zero_gradient(p)
        return p


def _div(ctx: _Ctx, u: VelocityField) -> np.ndarray:
    return sum(ctx.D(u[k]) for k in range(ctx.dim))


def _upper(ctx: _Ctx, v: VelocityField, k: int) -> np.ndarray | float:
    """Row ``k`` of the strictly upper mixed-derivative operator, ``sum_{j>k} G_k varpi D_j v_j``."""
    parts = [ctx.D(v[j]) for j in range(k + 1, ctx.dim)]
    if not parts:
        return 0.0
    return ctx.wG(sum(parts), k)


def _check_finite(state: SimState, *fields) -> None:
    for f in fields:
        arrays = [c.data for c in f] if isinstance(f, VelocityField) else [f.data]
        for a in arrays:
            if not np.isfinite(a).all():
                raise SchemeDivergenceError(f"non-finite values at step {state.n}")


# -- Gauss-Seidel style decoupled solve ---------------------------------------------


def _gs_velocity(ctx: _Ctx, alpha: float, base: list, old: VelocityField, t1: float,
                 homogeneous: bool = False, own: list | None = None,
                 old_own: list | None = None) -> VelocityField:
    """Sequential component solves of a Gauss-Seidel grad-div splitting.

    Row ``k``: ``alpha u_k - dt(nu Lap + own_k G_k varpi D_k) u_k
    = base_k + dt G_k varpi(sum_{j<k} D_j u_j^new + sum_{j>k} D_j old_j + old_own_k D_k old_k)``.
    """
    own = own or [1.0] * ctx.dim
    new = []
    for k in range(ctx.dim):
        cross = 0.0
        for j in range(ctx.dim):
            if j < k:
                cross = cross + ctx.D(new[j])
            elif j > k:
                cross = cross + ctx.D(old[j])
            elif old_own is not None and old_own[k] != 0.0:
                cross = cross + old_own[k] * ctx.D(old[k])
        rhs = base[k] + ctx.dt * ctx.wG(cross, k) if not np.isscalar(cross) else base[k]
        new.append(ctx.solve_component(k, alpha, own[k], rhs, t1, homogeneous, x0=old[k].interior))
    return VelocityField(new)


# -- first-order schemes ---------------------------------------------------------------


def _simple_init(state: SimState, u: VelocityField, p: ScalarField, **_):
    state["u"][0] = u
    state["p"][0] = p


def step_ac1(state: SimState, config: SchemeConfig, problem: Problem | None = None) -> None:
    ctx = _Ctx(state, config, problem)
    n, dt = state.n, config.dt
    t1 = (n + 1) * dt
    u, p = state["u"], state["p"]
    nl = ctx.nonlinear(u[n])
    rhs = [
        u[n][k].interior + dt * (ctx.forcing(k, t1) - nl[k] - ctx.G(p[n].interior, k))
        for k in range(ctx.dim)
    ]
    u[n + 1] = ctx.solve_coupled(rhs, t1, x0=[c.interior for c in u[n]])
    p[n + 1] = ctx.pressure_field(p[n].interior - config.chi * _div(ctx, u[n + 1]))
    _finish(state, ("u", "p"), keep=1)
    _check_finite(state, u[n + 1], p[n + 1])


def _step_gs_family(state, config, problem, variant):
    ctx = _Ctx(state, config, problem)
    n, dt = state.n, config.dt
    t1 = (n + 1) * dt
    u, p = state["u"], state["p"]
    nl = ctx.nonlinear(u[n])
    base = [
        u[n][k].interior + dt * (ctx.forcing(k, t1) - nl[k] - ctx.G(p[n].interior, k))
        for k in range(ctx.dim)
    ]
    d = ctx.dim
    if variant == "gs":
        u[n + 1] = _gs_velocity(ctx, 1.0, base, u[n], t1)
    elif variant == "gs_modified":
        # rows 2 and 3 see old levels except u_1; own terms 2u^{n+1} - u^n
        new = []
        for k in range(d):
            if k == 0:
                cross = sum(ctx.D(u[n][j]) for j in range(1, d))
                rhs = base[0] + dt * ctx.wG(cross, 0)
                new.append(ctx.solve_component(0, 1.0, 1.0, rhs, t1, x0=u[n][0].interior))
            else:
                cross = ctx.D(new[0]) - ctx.D(u[n][k])
                cross = cross + sum(ctx.D(u[n][j]) for j in range(1, d) if j != k)
                rhs = base[k] + dt * ctx.wG(cross, k)
                new.append(ctx.solve_component(k, 1.0, 2.0, rhs, t1, x0=u[n][k].interior))
        u[n + 1] = VelocityField(new)
    elif variant in ("jacobi", "jacobi_nd"):
        c = 1.0 if variant == "jacobi" else float(d)
        div_old = _div(ctx, u[n])
        new = []
        for k in range(d):
            expl = div_old - c * ctx.D(u[n][k])
            rhs = base[k] + dt * ctx.wG(expl, k)
            new.append(ctx.solve_component(k, 1.0, c, rhs, t1, x0=u[n][k].interior))
        u[n + 1] = VelocityField(new)
    else:  # pragma: no cover - guarded by the registry
        raise ValueError(variant)
    p[n + 1] = ctx.pressure_field(p[n].interior - ctx.varpi * _div(ctx, u[n + 1]))
    _finish(state, ("u", "p"), keep=1)
    _check_finite(state, u[n + 1], p[n + 1])


def step_gs2d(state, config, problem=None):
    _step_gs_family(state, config, problem, "gs")


step_gs3d = step_gs2d


def step_gs3d_modified(state, config, problem=None):
    _step_gs_family(state, config, problem, "gs_modified")


def step_jacobi2d(state, config, problem=None):
    _step_gs_family(state, config, problem, "jacobi")


def step_jacobi_nd(state, config, problem=None):
    _step_gs_family(state, config, problem, "jacobi_nd")


def _finish(state: SimState, names, keep: float) -> None:
    """Advance the call counter and drop levels older than ``n - keep``."""
    state.n += 1
    for name in names:
        state[name].prune(state.n - keep - 1e-9)


# -- direction splitting -------------------------------------------------------------


def _adi_component(ctx: _Ctx, k: int, R: np.ndarray, w_values) -> np.ndarray:
    """Invert ``(I - dt/2 (nu+varpi) d_kk)(I - dt/2 nu d_jj) w = R`` for component ``k`` (2D).

    ``w_values`` are the Dirichlet data of ``w`` (see :func:`boundary_values`).
    The outer factor is solved first; its boundary values are the inner
    factor applied to the boundary data of ``w``.
    """
    g = ctx.grid
    j = 1 - k
    dt, nu, varpi = ctx.dt, ctx.nu, ctx.varpi
    outer = ctx.line_solver(k, k, 0.5 * dt * (nu + varpi))
    inner = ctx.line_solver(k, j, 0.5 * dt * nu)
    lo = hi = None
    if w_values[k] is not None:
        wb = g.scalar(k)
        fill_boundary(wb, w_values)
        # inner factor evaluated along the two boundary slabs of axis k
        sl = [slice(None)] * 2
        sl[j] = slice(1, g.n[j] + 1)
        d = wb.data
        zb = []
        for idx in (1, g.n[k] + 1):
            s_mid = list(sl)
            s_mid[k] = slice(idx, idx + 1)
            s_lo = list(s_mid)
            s_hi = list(s_mid)
            s_lo[j] = slice(0, g.n[j])
            s_hi[j] = slice(2, g.n[j] + 2)
            mid = d[tuple(s_mid)]
            lap = (d[tuple(s_hi)] - 2.0 * mid + d[tuple(s_lo)]) / g.h[j] ** 2
            zb.append(mid - 0.5 * dt * nu * lap)
        lo, hi = zb
    z = outer.solve(R, lo, hi)
    jlo, jhi = line_boundary_data(g, k, j, w_values)
    return inner.solve(z, jlo, jhi)


def _increment_values(ctx: _Ctx, k: int, t0: float, t1: float, homogeneous: bool):
    trace = None if homogeneous else ctx.problem.velocity_bc
    if trace is None:
        return [None] * ctx.dim
    dt = t1 - t0
    return boundary_values(ctx.grid, k, lambda X, s: (trace(k, X, t1) - trace(k, X, t0)) / dt, t1)


def _dirsplit_velocity(ctx: _Ctx, u: Series, p_half: np.ndarray, n: int, cross0: np.ndarray,
                       nl: list, homogeneous: bool = False) -> VelocityField:
    """One factored direction-splitting update of ``u[n] -> u[n+1]`` (2D).

    ``cross0`` is the cell array ``D_y`` of the extrapolated ``u_2`` used in
    row 1 (``(u_2^n + u_2^{n-1})/2`` for the first-order scheme).
    """
    dt, nu, varpi = ctx.dt, ctx.nu, ctx.varpi
    th = (n + 0.5) * dt
    t0, t1 = n * dt, (n + 1) * dt
    un = u[n]
    new = []
    for k in range(2):
        j = 1 - k
        R = (
            (nu + varpi) * second_difference(un[k], k)
            + nu * second_difference(un[k], j)
            - ctx.G(p_half, k)
            + ctx.forcing(k, th)
            - nl[k]
        )
        if k == 0:
            R = R + ctx.wG(cross0, 0)
        else:
            R = R + ctx.wG(0.5 * (ctx.D(new[0]) + ctx.D(un[0])), 1)
        w = _adi_component(ctx, k, R, _increment_values(ctx, k, t0, t1, homogeneous))
        c = ctx.grid.scalar(k)
        c.interior = un[k].interior + dt * w
        fill_boundary(c, ctx.bc_values(k, t1, homogeneous))
        new.append(c)
    return VelocityField(new)


def _half_init(state, u, p, history=None, dt=None, **_):
    u_prev, p_half = (u, p) if history is None else (history(-dt)[0], history(-0.5 * dt)[1])
    return u_prev, p_half


def step_dirsplit1(state: SimState, config: SchemeConfig, problem: Problem | None = None) -> None:
    ctx = _Ctx(state, config, problem)
    n = state.n
    u, p = state["u"], state["p"]
    cross0 = 0.5 * (ctx.D(u[n][1]) + ctx.D(u[n - 1][1]))
    nl = ctx.nonlinear(u[n])
    u[n + 1] = _dirsplit_velocity(ctx, u, p[n - 0.5].interior, n, cross0, nl)
    p[n + 0.5] = ctx.pressure_field(
        p[n - 0.5].interior - 0.5 * ctx.varpi * (_div(ctx, u[n + 1]) + _div(ctx, u[n]))
    )
    _finish(state, ("u", "p"), keep=2)
    _check_finite(state, u[n + 1], p[n + 0.5])


def step_dirsplit_defect2(state: SimState, config: SchemeConfig, problem: Problem | None = None) -> None:
    ctx = _Ctx(state, config, problem)
    n, dt = state.n, config.dt
    ut, pt, u, p = state["ut"], state["pt"], state["u"], state["p"]
    # stage 1: first-order direction splitting on (ut, pt)
    cross0 = 0.5 * (ctx.D(ut[n][1]) + ctx.D(ut[n - 1][1]))
    ut[n + 1] = _dirsplit_velocity(ctx, ut, pt[n - 0.5].interior, n, cross0, ctx.nonlinear(ut[n]))
    pt[n + 0.5] = ctx.pressure_field(
        pt[n - 0.5].interior - 0.5 * ctx.varpi * (_div(ctx, ut[n + 1]) + _div(ctx, ut[n]))
    )
    dpt = pt[n + 0.5].interior - pt[n - 0.5].interior
    # stage 2: corrected cross term and pressure increment
    dut = (ut[n + 1][1] - ut[n][1]) / dt
    cross0 = 0.5 * (ctx.D(u[n][1]) + ctx.D(u[n - 1][1])) + dt * ctx.D(dut)
    if config.nonlinear:
        b_now, b_old = ctx.nonlinear(u[n]), ctx.nonlinear(u[n - 1])
        nl = [1.5 * a - 0.5 * b for a, b in zip(b_now, b_old)]
    else:
        nl = [0.0, 0.0]
    # the incremented pressure is centred at n + 1/2; the lagged one is only first order
    q = p[n - 0.5].interior + (dpt if config.dirsplit_pressure == "incremented" else 0.0)
    u[n + 1] = _dirsplit_velocity(ctx, u, q, n, cross0, nl)
    p[n + 0.5] = ctx.pressure_field(
        p[n - 0.5].interior + dpt - 0.5 * ctx.varpi * (_div(ctx, u[n + 1]) + _div(ctx, u[n]))
    )
    _finish(state, ("ut", "pt", "u", "p"), keep=2)
    _check_finite(state, u[n + 1], p[n + 0.5])


# -- BDF2 bootstrap -----------------------------------------------------------------------


def step_bdf2_bootstrap(state: SimState, config: SchemeConfig, problem: Problem | None = None) -> None:
    ctx = _Ctx(state, config, problem)
    n, dt = state.n, config.dt
    t1 = (n + 1) * dt
    ut, pt, u, p = state["ut"], state["pt"], state["u"], state["p"]
    d = ctx.dim
    f = [ctx.forcing(k, t1) for k in range(d)]
    # stage 1: first-order Gauss-Seidel step for the bootstrap pair
    nlt = ctx.nonlinear(ut[n])
    base = [ut[n][k].interior + dt * (f[k] - nlt[k] - ctx.G(pt[n].interior, k)) for k in range(d)]
    ut[n + 1] = _gs_velocity(ctx, 1.0, base, ut[n], t1)
    pt[n + 1] = ctx.pressure_field(pt[n].interior - ctx.varpi * _div(ctx, ut[n + 1]))
    dpt = pt[n + 1].interior - pt[n].interior
    # stage 2: BDF2 with extrapolated upper cross terms
    if config.nonlinear:
        b_now, b_old = ctx.nonlinear(u[n]), ctx.nonlinear(u[n - 1])
        nl = [2.0 * a - b for a, b in zip(b_now, b_old)]
    else:
        nl = [0.0] * d
    q = p[n].interior + dpt
    base = [
        2.0 * u[n][k].interior - 0.5 * u[n - 1][k].interior + dt * (f[k] - nl[k] - ctx.G(q, k))
        for k in range(d)
    ]
    extrap = 2.0 * u[n] - u[n - 1]
    u[n + 1] = _gs_velocity(ctx, 1.5, base, extrap, t1)
    p[n + 1] = ctx.pressure_field(q - ctx.varpi * _div(ctx, u[n + 1]))
    _finish(state, ("ut", "pt", "u", "p"), keep=2)
    _check_finite(state, u[n + 1], p[n + 1])


# -- defect correction cascade ---------------------------------------------------------------


def _defect_step(state: SimState, config: SchemeConfig, problem: Problem | None, stages: int,
                 split: bool) -> None:
    ctx = _Ctx(state, config, problem)
    n, dt = state.n, config.dt
    d = ctx.dim
    t1 = (n + 1) * dt
    S = state
    u0, u1, u2 = S["u0"], S["u1"], S["u2"]
    p0, p1, p2 = S["p0"], S["p1"], S["p2"]
    du0, d2u0, d3u0, du1, d2u1 = S["du0"], S["d2u0"], S["d3u0"], S["du1"], S["d2u1"]
    dp0, dp1 = S["dp0"], S["dp1"]
    nl0, nl1 = S["nl0"], S["nl1"]
    # pressure update coefficient of the coupled baseline is chi, of the split form varpi
    w_p = ctx.varpi if split else config.chi

    def solve(alpha_base: list, old: VelocityField, t: float, homogeneous: bool) -> VelocityField:
        if split:
            return _gs_velocity(ctx, 1.0, alpha_base, old, t, homogeneous)
        return ctx.solve_coupled(alpha_base, t, homogeneous, x0=[c.interior for c in old])

    # stage 0, n >= 0
    nl0[n + 1] = ctx.nonlinear(u0[n])
    base = [
        u0[n][k].interior + dt * (ctx.forcing(k, t1) - nl0[n + 1][k] - ctx.G(p0[n].interior, k))
        for k in range(d)
    ]
    u0[n + 1] = solve(base, u0[n], t1, False)
    p0[n + 1] = ctx.pressure_field(p0[n].interior - w_p * _div(ctx, u0[n + 1]))
    du0[n + 1] = (u0[n + 1] - u0[n]) / dt
    dp0[n + 1] = (p0[n + 1] - p0[n]) / dt
    _check_finite(state, u0[n + 1])

    # stage 1, n >= 1: computes u1[n]
    if stages >= 2 and n >= 1:
        d2u0[n + 1] = (du0[n + 1] - du0[n]) / dt
        if config.nonlinear:
            nl1[n] = ctx.nonlinear(u0[n] + dt * u1[n - 1])
            nl_corr = [(a - b) / dt for a, b in zip(nl1[n], nl0[n])]
        else:
            nl_corr = [0.0] * d
        q = p1[n - 1].interior + dp0[n].interior
        base = []
        for k in range(d):
            r = -0.5 * d2u0[n + 1][k].interior - nl_corr[k] - ctx.G(q, k)
            if split:
                r = r + _mixed_source(ctx, u0[n] - u0[n - 1], du0[n + 1], k)
            base.append(u1[n - 1][k].interior + dt * r)
        u1[n] = solve(base, u1[n - 1], n * dt, True)
        p1[n] = ctx.pressure_field(q - w_p * _div(ctx, u1[n]))
        du1[n] = (u1[n] - u1[n - 1]) / dt
        dp1[n] = (p1[n] - p1[n - 1]) / dt
        _check_finite(state, u1[n])

    # stage 2, n >= 2: computes u2[n-1]
    if stages >= 3 and n >= 2:
        d2u1[n] = (du1[n] - du1[n - 1]) / dt
        d3u0[n + 1] = (d2u0[n + 1] - d2u0[n]) / dt
        if config.nonlinear:
            nl2 = ctx.nonlinear(u0[n - 1] + dt * u1[n - 1] + dt * dt * u2[n - 2])
            nl_corr = [(a - b) / dt**2 for a, b in zip(nl2, nl1[n - 1])]
        else:
            nl_corr = [0.0] * d
        q = p2[n - 2].interior + dp1[n - 1].interior
        base = []
        for k in range(d):
            r = (
                -0.5 * d2u1[n][k].interior
                + d3u0[n + 1][k].interior / 6.0
                - nl_corr[k]
                - ctx.G(q, k)
            )
            if split:
                # du1[n+1] does not exist yet at this point of the cascade
                r = r + _mixed_source(ctx, u1[n - 1] - u1[n - 2], du1[n], k)
            base.append(u2[n - 2][k].interior + dt * r)
        u2[n - 1] = solve(base, u2[n - 2], (n - 1) * dt, True)
        p2[n - 1] = ctx.pressure_field(q - w_p * _div(ctx, u2[n - 1]))
        _check_finite(state, u2[n - 1])

    state.n += 1
    m = state.n
    for name in ("u0", "p0", "du0", "d2u0", "d3u0", "nl0"):
        S[name].prune(m - 3)
    for name in ("u1", "p1", "du1", "dp0", "dp1", "d2u1", "nl1"):
        S[name].prune(m - 3)
    for name in ("u2", "p2"):
        S[name].prune(m - 3)


def _mixed_source(ctx: _Ctx, increment: VelocityField, newest: VelocityField, k: int):
    """Mixed-derivative source of a split correction stage (row ``k``)."""
    mode = ctx.cfg.mixed_correction
    if mode == "matched":
        return _upper(ctx, increment, k) / ctx.dt
    r = _upper(ctx, increment, k)
    if mode == "verbatim":
        r = r + _upper(ctx, newest, k)
    return r


def _make_defect(stages: int, split: bool) -> Callable:
    def step(state, config, problem=None):
        _defect_step(state, config, problem, stages, split)

    step.__name__ = f"step_defect{stages}_{'split' if split else 'coupled'}"
    step.__doc__ = (
        f"{stages}-stage defect correction with "
        f"{'decoupled (Gauss-Seidel) ' if split else 'coupled '}grad-div solves."
    )
    return step


step_defect1_split = _make_defect(1, True)
step_defect2_split = _make_defect(2, True)
step_defect3_split = _make_defect(3, True)
step_defect1_coupled = _make_defect(1, False)
step_defect2_coupled = _make_defect(2, False)
step_defect3_coupled = _make_defect(3, False)


# -- registry, initialisation, output -----------------------------------------------------


@dataclass(frozen=True)
class SchemeInfo:
    name: str
    step: Callable
    dims: tuple = (2, 3)
    order: int = 1
    kind: str = "simple"  # simple | half | bootstrap | defect
    stages: int = 1
    constant_varpi: bool = False
    proved: bool = False


SCHEMES = {
    s.name: s
    for s in [
        SchemeInfo("ac1", step_ac1, proved=True),
        SchemeInfo("gs2d", step_gs2d, dims=(2,), proved=True),
        SchemeInfo("gs3d", step_gs3d, dims=(3,)),
        SchemeInfo("gs3d_modified", step_gs3d_modified, dims=(3,), proved=True),
        SchemeInfo("jacobi2d", step_jacobi2d, dims=(2,), proved=True),
        SchemeInfo("jacobi_nd", step_jacobi_nd, proved=True),
        SchemeInfo("dirsplit1", step_dirsplit1, dims=(2,), kind="half", constant_varpi=True, proved=True),
        SchemeInfo("dirsplit_defect2", step_dirsplit_defect2, dims=(2,), order=2, kind="half2",
                   constant_varpi=True),
        SchemeInfo("bdf2_bootstrap", step_bdf2_bootstrap, order=2, kind="bootstrap"),
        SchemeInfo("defect1_split", step_defect1_split, kind="defect", stages=1),
        SchemeInfo("defect2_split", step_defect2_split, order=2, kind="defect", stages=2),
        SchemeInfo("defect3_split", step_defect3_split, order=3, kind="defect", stages=3),
        SchemeInfo("defect1_coupled", step_defect1_coupled, kind="defect", stages=1),
        SchemeInfo("defect2_coupled", step_defect2_coupled, order=2, kind="defect", stages=2),
        SchemeInfo("defect3_coupled", step_defect3_coupled, order=3, kind="defect", stages=3),
    ]
}


def get_stepper(name: str) -> Callable:
    try:
        return SCHEMES[name].step
    except KeyError:
        raise SchemeConfigError(f"unknown scheme {name!r}") from None


def initial_state(grid: MacGrid, config: SchemeConfig, u: VelocityField, p: ScalarField,
                  history: Callable | None = None) -> SimState:
    """Seed every level a scheme needs.

    ``history(t) -> (u, p)`` supplies earlier levels (exact solution at
    negative times); without it earlier levels repeat the initial data.
    Defect-correction stages start at zero.
    """
    if not grid.same_as(u.grid) or not grid.same_as(p.grid):
        raise SchemeConfigError("initial data live on a different grid")
    if config.dim != grid.dim:
        raise SchemeConfigError(f"config dim {config.dim} does not match grid dim {grid.dim}")
    info = SCHEMES[config.scheme]
    state = SimState(grid)
    p = p.copy()
    fill_zero_gradient(p)
    dt = config.dt
    earlier = (lambda t: history(t)) if history is not None else (lambda t: (u, p))
    if info.kind == "simple":
        state["u"][0], state["p"][0] = u.copy(), p
    elif info.kind in ("half", "half2"):
        names = [("u", "p")] + ([("ut", "pt")] if info.kind == "half2" else [])
        for un, pn in names:
            state[un][0] = u.copy()
            state[un][-1] = earlier(-dt)[0].copy()
            ph = earlier(-0.5 * dt)[1].copy()
            fill_zero_gradient(ph)
            state[pn][-0.5] = ph
    elif info.kind == "bootstrap":
        state["ut"][0], state["pt"][0] = u.copy(), p.copy()
        state["u"][0], state["p"][0] = u.copy(), p.copy()
        state["u"][-1] = earlier(-dt)[0].copy()
    elif info.kind == "defect":
        zero_u = grid.velocity()
        zero_p = grid.scalar(CELL)
        state["u0"][0], state["p0"][0] = u.copy(), p
        for name in ("u1", "u2"):
            state[name][0] = zero_u.copy()
        for name in ("p1", "p2"):
            state[name][0] = zero_p.copy()
    return state


def output_lag(config: SchemeConfig) -> int:
    """Number of extra calls before the output reaches the stage-0 level."""
    info = SCHEMES[config.scheme]
    return info.stages - 1 if info.kind == "defect" else 0


def solution(state: SimState, config: SchemeConfig) -> tuple[VelocityField, ScalarField, float]:
    """The scheme's best velocity/pressure and their time.

    Defect schemes return the composite at the lagged level; half-step
    schemes extrapolate the pressure to the integer level.
    """
    info = SCHEMES[config.scheme]
    dt = config.dt
    n = state.n
    if info.kind == "defect":
        m = n - (info.stages - 1)
        if m < 0:
            raise ValueError("composite solution not available yet")
        u = state["u0"][m]
        p = state["p0"][m]
        if info.stages >= 2:
            u = u + dt * state["u1"][m]
            p = p + dt * state["p1"][m]
        if info.stages >= 3:
            u = u + dt * dt * state["u2"][m]
            p = p + dt * dt * state["p2"][m]
        return u, p, m * dt
    if info.kind in ("half", "half2"):
        ps = state["p"]
        if (n - 1.5) in ps:
            p = 1.5 * ps[n - 0.5] - 0.5 * ps[n - 1.5]
        else:
            p = ps[n - 0.5].copy()
        return state["u"][n], p, n * dt
    return state["u"][n], state["p"][n], n * dt


def pressure_law_residual(state: SimState, config: SchemeConfig) -> float:
    """Max-norm residual of the most recent pressure update."""
    info = SCHEMES[config.scheme]
    grid = state.grid
    n = state.n
    w = config.varpi

    def div(u):
        return sum(face_to_cell(u[k]) for k in range(grid.dim))

    if info.kind == "simple":
        coeff = config.chi if config.scheme == "ac1" else w
        p, u = state["p"], state["u"]
        r = p[n].interior - p[n - 1].interior + coeff * div(u[n])
    elif info.kind == "half":
        p, u = state["p"], state["u"]
        r = p[n - 0.5].interior - p[n - 1.5].interior + 0.5 * w * (div(u[n]) + div(u[n - 1]))
    elif info.kind == "half2":
        p, u, pt = state["p"], state["u"], state["pt"]
        r = (p[n - 0.5].interior - p[n - 1.5].interior
             - (pt[n - 0.5].interior - pt[n - 1.5].interior)
             + 0.5 * w * (div(u[n]) + div(u[n - 1])))
    elif info.kind == "bootstrap":
        p, u, pt = state["p"], state["u"], state["pt"]
        r = (p[n].interior - p[n - 1].interior - (pt[n].interior - pt[n - 1].interior)
             + w * div(u[n]))
    else:
        coeff = w if config.scheme.endswith("split") else config.chi
        S = state
        r = S["p0"][n].interior - S["p0"][n - 1].interior + coeff * div(S["u0"][n])
        parts = [np.max(np.abs(r))]
        # correction stages: p_m = p_m(prev) + (divided difference of p_{m-1}) - coeff div u_m
        if info.stages >= 2 and n - 1 >= 1 and (n - 1) in S["p1"]:
            m = n - 1
            r1 = (S["p1"][m].interior - S["p1"][m - 1].interior - S["dp0"][m].interior
                  + coeff * div(S["u1"][m]))
            parts.append(np.max(np.abs(r1)))
        if info.stages >= 3 and n - 2 >= 1 and (n - 2) in S["p2"]:
            m = n - 2
            r2 = (S["p2"][m].interior - S["p2"][m - 1].interior - S["dp1"][m].interior
                  + coeff * div(S["u2"][m]))
            parts.append(np.max(np.abs(r2)))
        return float(max(parts))
    return float(np.max(np.abs(r)))


# -- energies ---------------------------------------------------------------------------


def _sq(values: np.ndarray, weight, vol: float) -> float:
    return float(np.sum(weight * values * values) * vol)


def _kinetic(u: VelocityField) -> float:
    vol = u.grid.cell_volume
    return float(sum(np.sum(c.owned ** 2) for c in u) * vol)


def _b_seminorm(state: SimState, u: VelocityField, config: SchemeConfig) -> float:
    """``sum_k ((A_kk + C_kk) A_kj u_k, u_k)`` for the 2D direction splitting."""
    g = u.grid
    nu, w = config.nu, config.varpi
    total = 0.0
    for k in range(2):
        key = ("b_seminorm", k)
        if key not in state.cache:
            j = 1 - k
            state.cache[key] = (second_difference_matrix(g, k, k) @ second_difference_matrix(g, k, j)).tocsr()
        v = u[k].interior.ravel()
        total += (nu + w) * nu * float(v @ (state.cache[key] @ v))
    return total * g.cell_volume


def energy(scheme: str, state: SimState, config: SchemeConfig) -> EnergyBreakdown:
    """Theorem-specific stability functional of the current state.

    Schemes without a proved functional get ``||u||^2 + dt ||varpi^-1/2 p||^2``
    flagged ``heuristic``.
    """
    info = SCHEMES[scheme]
    g = state.grid
    vol = g.cell_volume
    dt = config.dt
    w = config.varpi
    n = state.n

    def dirn(u, k):
        return face_to_cell(u[k])

    if info.kind == "half" and scheme == "dirsplit1":
        u, p = state["u"], state["p"]
        ubar2 = 0.5 * (dirn(u[n], 1) + dirn(u[n - 1], 1))
        terms = {
            "kinetic": _kinetic(u[n]),
            "pressure": dt * _sq(p[n - 0.5].interior, 1.0 / w, vol),
            "dir_1": dt * _sq(ubar2, w, vol),
            "b_seminorm": 0.25 * dt * dt * _b_seminorm(state, u[n], config),
        }
        return EnergyBreakdown(terms)
    if info.kind == "simple":
        u, p = state["u"][n], state["p"][n]
        coeff = config.chi if scheme == "ac1" else w
        terms = {"kinetic": _kinetic(u), "pressure": dt * _sq(p.interior, 1.0 / coeff, vol)}
        if scheme == "gs2d":
            terms["dir_1"] = dt * _sq(dirn(u, 1), w, vol)
        elif scheme == "jacobi2d":
            for k in range(2):
                terms[f"dir_{k}"] = dt * _sq(dirn(u, k), w, vol)
        elif scheme == "jacobi_nd":
            for k in range(g.dim):
                terms[f"dir_{k}"] = dt * g.dim * _sq(dirn(u, k), w, vol)
        elif scheme == "gs3d_modified":
            for k in (1, 2):
                terms[f"dir_{k}"] = 2.0 * dt * _sq(dirn(u, k), w, vol)
        return EnergyBreakdown(terms, heuristic=not info.proved)
    u, p, _ = solution(state, config)
    terms = {"kinetic": _kinetic(u), "pressure": dt * _sq(p.interior, 1.0 / w, vol)}
    return EnergyBreakdown(terms, heuristic=True)


def lemma_identity(a1, b1, c1, b0, c0):
    """Both sides of the algebraic identity behind the modified 3D scheme's stability."""
    lhs = (
        2.0 * ((a1 + b0 + c0) * a1 + (a1 + b1 + c0) * b1 + (a1 + b1 + c1) * c1)
        + 2.0 * (b1 - b0) * b1
        - 2.0 * (b1 - b0) * c1
        + 2.0 * (c1 - c0) * c1
    )
    rhs = (
        (a1 + b1 + c1) ** 2
        + (a1 + b0 + c0) ** 2
        + 2.0 * (b1 * b1 + c1 * c1 - b0 * b0 - c0 * c0)
        + (b1 - b0 - c1 + c0) ** 2
    )
    return lhs, rhs


def advance(state: SimState, config: SchemeConfig, problem: Problem | None = None, steps: int = 1,
            callback: Callable | None = None) -> SimState:
    step = get_stepper(config.scheme)
    # overflow is reported as SchemeDivergenceError by the finiteness check
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(steps):
            step(state, config, problem)
            if callback is not None:
                callback(state)
    return state
