"""Convergence studies, stability probes and single solves.

Everything here is deterministic for a given :class:`StudySpec`: random
initial data come from ``numpy.random.default_rng(seed)`` and wall-clock
timings are only recorded when ``timing`` is requested.
"""

from __future__ import annotations

import io
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .linsolve import ConvergenceError, SingularMatrixError
from .mac import CELL, MacGrid, VelocityField, fill_boundary, fill_zero_gradient
from .manufactured import (
    CASES,
    ErrorTriple,
    evaluate_errors,
    exact_pressure,
    exact_velocity,
    field_errors,
    get_case,
    manufactured_problem,
)
from .schemes import (
    SCHEMES,
    SchemeConfig,
    SchemeConfigError,
    SchemeDivergenceError,
    advance,
    energy,
    initial_state,
    output_lag,
    solution,
)

CSV_HEADER = "dt,err_u,err_p,err_div,order_u,order_p,order_div,wall_seconds"
SOLVER_FAILURES = (SchemeDivergenceError, ConvergenceError, SingularMatrixError, FloatingPointError)


class SpecError(ValueError):
    """Invalid study specification (CLI exit code 2)."""


def fmt(x) -> str:
    """CSV float: 17 significant digits, empty for ``None``."""
    if x is None:
        return ""
    return f"{float(x):.17g}"


@dataclass
class StudySpec:
    scheme: str
    case: str = "mms2d"
    nx: int = 32
    dts: tuple = (0.2, 0.1, 0.05, 0.025)
    t_final: float = 10.0
    nu: float = 1.0
    chi: float = 1.0
    lam: float = 0.0
    nonlinear: bool = False
    reference: str = "fine"
    refine: int = 8
    seed: int = 0
    dim: int | None = None
    timing: bool = False
    mean_adjust: bool = True
    mixed_correction: str = "matched"
    solver: str = "direct"

    def __post_init__(self):
        self.dts = tuple(float(d) for d in self.dts)

    def validate(self, ordered: bool = True) -> "StudySpec":
        """Raise :class:`SpecError` on bad input; ``ordered`` requires strictly decreasing dts."""
        if self.scheme not in SCHEMES:
            raise SpecError(f"unknown scheme {self.scheme!r}; choose from {', '.join(sorted(SCHEMES))}")
        if self.case not in CASES:
            raise SpecError(f"unknown case {self.case!r}; choose from {', '.join(sorted(CASES))}")
        case_dim = CASES[self.case].dim
        if self.dim is not None and self.dim != case_dim:
            raise SpecError(f"case {self.case} is {case_dim}D but dim={self.dim}")
        if case_dim not in SCHEMES[self.scheme].dims:
            raise SpecError(f"scheme {self.scheme} does not support {case_dim}D")
        if self.nx < 2:
            raise SpecError(f"nx must be at least 2, got {self.nx}")
        if not self.dts:
            raise SpecError("dt list is empty")
        if any(not (d > 0 and math.isfinite(d)) for d in self.dts):
            raise SpecError("every dt must be positive and finite")
        if ordered and any(b >= a for a, b in zip(self.dts, self.dts[1:])):
            raise SpecError(f"dt list must be strictly decreasing, got {list(self.dts)}")
        if not (self.t_final > 0 and math.isfinite(self.t_final)):
            raise SpecError("t_final must be positive")
        if self.nu <= 0 or self.chi <= 0 or self.lam < 0:
            raise SpecError("need nu > 0, chi > 0, lambda >= 0")
        if self.reference not in ("analytic", "fine"):
            raise SpecError(f"reference must be 'analytic' or 'fine', got {self.reference!r}")
        if self.refine < 2:
            raise SpecError("refine factor must be at least 2")
        if self.solver not in ("direct", "cg"):
            raise SpecError(f"solver must be 'direct' or 'cg', got {self.solver!r}")
        return self

    @property
    def case_dim(self) -> int:
        return CASES[self.case].dim

    def config(self, dt: float) -> SchemeConfig:
        return SchemeConfig(
            dim=self.case_dim, dt=dt, nu=self.nu, lam=self.lam, chi=self.chi, scheme=self.scheme,
            nonlinear=self.nonlinear, solver=self.solver, mixed_correction=self.mixed_correction,
        )

    def grid(self) -> MacGrid:
        return MacGrid.uniform(self.case_dim, self.nx)


def adjust_dt(t_final: float, dt: float) -> tuple[float, int]:
    """Round ``dt`` down so that ``t_final / dt`` is an integer step count."""
    steps = max(1, math.ceil(t_final / dt - 1e-9))
    return t_final / steps, steps


# -- one simulation ------------------------------------------------------------


@dataclass
class RunResult:
    u: VelocityField
    p: object
    t: float
    dt: float
    steps: int
    wall_seconds: float


def simulate(spec: StudySpec, dt: float) -> RunResult:
    """Run the manufactured problem of ``spec`` up to ``t_final`` with step ``dt``."""
    dt, steps = adjust_dt(spec.t_final, dt)
    case = get_case(spec.case)
    grid = spec.grid()
    cfg = spec.config(dt)
    problem = manufactured_problem(case, spec.nu, spec.nonlinear)

    def history(t):
        return exact_velocity(grid, case, t), exact_pressure(grid, case, t)

    t0 = time.perf_counter()
    state = initial_state(grid, cfg, *history(0.0), history=history)
    advance(state, cfg, problem, steps + output_lag(cfg))
    u, p, t = solution(state, cfg)
    return RunResult(u, p, t, dt, steps, time.perf_counter() - t0)


# -- convergence ------------------------------------------------------------------


@dataclass
class ReportRow:
    dt: float
    errors: ErrorTriple | None
    orders: tuple = (None, None, None)
    wall_seconds: float | None = None
    failure: str | None = None

    def csv(self) -> str:
        if self.errors is None:
            errs = ["nan", "nan", "nan"]
        else:
            errs = [fmt(self.errors.velocity), fmt(self.errors.pressure), fmt(self.errors.divergence)]
        return ",".join([fmt(self.dt), *errs, *(fmt(o) for o in self.orders), fmt(self.wall_seconds)])


@dataclass
class ErrorReport:
    rows: list
    metadata: dict
    notes: list = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return any(r.failure for r in self.rows)

    def to_csv(self) -> str:
        out = io.StringIO(newline="")
        out.write(CSV_HEADER + "\n")
        for r in self.rows:
            out.write(r.csv() + "\n")
        return out.getvalue()

    def column(self, name: str) -> list:
        """Values of one CSV column (``err_u``, ``order_p`` ...) as floats or ``None``."""
        errs = {"err_u": "velocity", "err_p": "pressure", "err_div": "divergence"}
        if name in errs:
            return [None if r.errors is None else getattr(r.errors, errs[name]) for r in self.rows]
        orders = {"order_u": 0, "order_p": 1, "order_div": 2}
        return [r.orders[orders[name]] for r in self.rows]


def observed_order(e_coarse, e_fine, dt_coarse, dt_fine):
    """``log(e_c / e_f) / log(dt_c / dt_f)``; ``None`` when undefined."""
    if e_coarse is None or e_fine is None:
        return None
    if not (e_coarse > 0 and e_fine > 0) or not (math.isfinite(e_coarse) and math.isfinite(e_fine)):
        return None
    ratio = dt_coarse / dt_fine
    if abs(ratio - 2.0) < 1e-12:
        return math.log2(e_coarse / e_fine)
    return math.log(e_coarse / e_fine) / math.log(ratio)


def fill_orders(rows: list, notes: list) -> None:
    for prev, row in zip(rows, rows[1:]):
        ratio = prev.dt / row.dt
        if abs(ratio - 2.0) > 1e-12:
            notes.append(f"dt ratio {ratio:.6g} between {prev.dt:.6g} and {row.dt:.6g} is not 2; "
                         "order uses log(e_i/e_i+1)/log(dt_i/dt_i+1)")
        if prev.errors is None or row.errors is None:
            continue
        row.orders = tuple(
            observed_order(a, b, prev.dt, row.dt)
            for a, b in zip(
                (prev.errors.velocity, prev.errors.pressure, prev.errors.divergence),
                (row.errors.velocity, row.errors.pressure, row.errors.divergence),
            )
        )


def run_convergence(spec: StudySpec) -> ErrorReport:
    """Errors at ``t_final`` for every dt, plus observed orders.

    With ``reference="fine"`` the errors are measured against the same
    scheme run at ``min(dt) / refine``, which cancels the spatial error; the
    divergence column is then ``||div(u - u_ref)||``.  With
    ``reference="analytic"`` errors are against the sampled exact solution
    and the divergence column is ``||div u||``.
    """
    spec.validate()
    notes = []
    ref = None
    if spec.reference == "fine":
        ref = simulate(spec, min(spec.dts) / spec.refine)
    case = get_case(spec.case)
    rows = []
    for dt_req in spec.dts:
        dt, _ = adjust_dt(spec.t_final, dt_req)
        if dt != dt_req:
            notes.append(f"dt {dt_req:.17g} rounded down to {dt:.17g} so that T/dt is integral")
        try:
            run = simulate(spec, dt)
        except SOLVER_FAILURES as exc:
            rows.append(ReportRow(dt, None, failure=str(exc)))
            notes.append(f"dt {dt:.17g}: {exc}")
            continue
        if ref is not None:
            err = field_errors(run.u, run.p, ref.u, ref.p, spec.mean_adjust)
        else:
            err = evaluate_errors(run.u, run.p, case, run.t, spec.mean_adjust)
        rows.append(ReportRow(dt, err, wall_seconds=run.wall_seconds if spec.timing else None))
    fill_orders(rows, notes)
    meta = asdict(spec)
    if ref is not None:
        meta["dt_ref"] = ref.dt
    return ErrorReport(rows, meta, notes)


# -- stability ----------------------------------------------------------------------


def random_solenoidal_velocity(grid: MacGrid, rng: np.random.Generator) -> VelocityField:
    """Discretely divergence-free random field with zero normal flux.

    Discrete curl of a random stream function (2D) or vector potential (3D)
    that vanishes on the boundary; scaled to unit L2 norm.
    """
    n, h = grid.n, grid.h
    u = grid.velocity()
    if grid.dim == 2:
        psi = np.zeros((n[0] + 1, n[1] + 1))
        psi[1:-1, 1:-1] = rng.standard_normal((n[0] - 1, n[1] - 1))
        u[0].data[grid.owned(0)] = np.diff(psi, axis=1) / h[1]
        u[1].data[grid.owned(1)] = -np.diff(psi, axis=0) / h[0]
    else:
        pot = []
        for k in range(3):
            shape = [m + 1 for m in n]
            shape[k] = n[k]
            a = np.zeros(shape)
            inner = tuple(slice(None) if ax == k else slice(1, -1) for ax in range(3))
            a[inner] = rng.standard_normal(a[inner].shape)
            pot.append(a)
        for k in range(3):
            i, j = (k + 1) % 3, (k + 2) % 3
            u[k].data[grid.owned(k)] = np.diff(pot[j], axis=i) / h[i] - np.diff(pot[i], axis=j) / h[j]
    norm = math.sqrt(sum(float(np.sum(c.owned ** 2)) for c in u) * grid.cell_volume)
    for c in u:
        c.data /= norm
        fill_boundary(c, [None] * grid.dim)
    return u


@dataclass
class StabilityTrace:
    dt: float
    terms: list
    rows: list
    heuristic: bool
    monotone: bool
    max_relative_increase: float

    def to_csv(self) -> str:
        out = io.StringIO(newline="")
        out.write(",".join(["dt", "step", *self.terms, "total"]) + "\n")
        for step, vals in self.rows:
            out.write(",".join([fmt(self.dt), str(step), *(fmt(v) for v in vals), fmt(sum(vals))]) + "\n")
        out.write(f"# monotone={'yes' if self.monotone else 'no'} heuristic={'yes' if self.heuristic else 'no'} "
                  f"max_relative_increase={fmt(self.max_relative_increase)}\n")
        return out.getvalue()


def run_stability(spec: StudySpec, steps: int = 500, slack: float = 1e-12, zero_data: bool = False) -> list:
    """Energy traces with ``f = 0``, homogeneous data and random solenoidal ``u0``.

    Returns one :class:`StabilityTrace` per dt of ``spec``, in any dt order.
    """
    spec.validate(ordered=False)
    if steps < 1:
        raise SpecError("steps must be positive")
    traces = []
    for dt in spec.dts:
        grid = spec.grid()
        cfg = spec.config(dt)
        rng = np.random.default_rng(spec.seed)
        u0 = grid.velocity() if zero_data else random_solenoidal_velocity(grid, rng)
        p0 = grid.scalar(CELL)
        state = initial_state(grid, cfg, u0, p0)
        rows = []
        e = energy(spec.scheme, state, cfg)
        names = list(e.terms)
        rows.append((0, [e.terms[k] for k in names]))
        worst = -math.inf
        prev = e.total
        heuristic = e.heuristic
        for i in range(1, steps + 1):
            advance(state, cfg, None, 1)
            e = energy(spec.scheme, state, cfg)
            rows.append((i, [e.terms[k] for k in names]))
            if prev > 0:
                worst = max(worst, (e.total - prev) / prev)
            elif e.total > 0:
                worst = math.inf
            prev = e.total
        traces.append(StabilityTrace(dt, names, rows, heuristic, worst <= slack, worst))
    return traces


# -- single solve ------------------------------------------------------------------------


def run_solve(spec: StudySpec, path=None) -> tuple[dict, ErrorTriple]:
    """One manufactured run at ``spec.dts[0]``; optionally saved as ``.npz``.

    The snapshot holds every stored entry (ghosts included) of each velocity
    component as ``u0``, ``u1``[, ``u2``] and the pressure as ``p``, plus
    ``t``, ``dt`` and ``n`` (cells per axis).
    """
    spec.validate(ordered=False)
    run = simulate(spec, spec.dts[0])
    case = get_case(spec.case)
    err = evaluate_errors(run.u, run.p, case, run.t, spec.mean_adjust)
    p = run.p.copy()
    fill_zero_gradient(p)
    snap = {f"u{k}": c.data.copy() for k, c in enumerate(run.u)}
    snap.update(p=p.data.copy(), t=np.float64(run.t), dt=np.float64(run.dt), n=np.asarray(run.u.grid.n))
    if path is not None:
        save_snapshot(path, snap)
    return snap, err


def save_snapshot(path, snap: dict) -> None:
    try:
        with open(path, "wb") as fh:
            np.savez(fh, **snap)
    except OSError as exc:
        raise OSError(f"cannot write snapshot to {path}: {exc.strerror or exc}") from exc


def load_snapshot(path) -> dict:
    try:
        with np.load(path) as data:
            return {k: data[k] for k in data.files}
    except OSError as exc:
        raise OSError(f"cannot read snapshot from {path}: {exc.strerror or exc}") from exc


def with_overrides(spec: StudySpec, **changes) -> StudySpec:
    return replace(spec, **changes)
