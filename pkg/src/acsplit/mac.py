"""Uniform MAC (staggered) grids, fields and discrete operators.

Layout conventions
------------------
Pressure-like scalars live at cell centres.  Velocity component ``k`` lives
on the faces normal to axis ``k``.  Every stored array carries one ghost
layer on each side of every axis:

* along a *cell-centred* axis there are ``n + 2`` entries; index ``0`` and
  ``n + 1`` are ghosts, ``1..n`` are the cell centres;
* along a *face* axis (the normal axis of a velocity component) there are
  ``n + 3`` entries; index ``1`` and ``n + 1`` are the boundary faces, ``2..n``
  the interior faces and ``0``/``n + 2`` ghosts.

Dirichlet data enter in two ways: boundary faces of the normal component are
assigned the trace exactly, and tangential ghosts are mirrored through the
wall (``ghost = 2 * trace - first_interior``).

The discrete ``divergence`` maps faces to cells and the interior-face
``gradient`` is minus its adjoint, so all grad-div type products
``G_i (w D_j v)`` used by the time steppers inherit the summation-by-parts
structure of the continuous operators.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

CELL = -1

#: trace(X, t) -> array, X a tuple of coordinate arrays
ScalarTrace = Callable[[tuple, float], np.ndarray]
#: trace(k, X, t) -> array for velocity component k
VectorTrace = Callable[[int, tuple, float], np.ndarray]


class GridMismatchError(ValueError):
    """Fields defined on different grids or at the wrong location."""


@dataclass(frozen=True, eq=False)
class MacGrid:
    """Axis-aligned box split into ``n[0] x ... x n[dim-1]`` uniform cells."""

    n: tuple[int, ...]
    origin: tuple[float, ...] | None = None
    extent: tuple[float, ...] | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        n = tuple(int(v) for v in self.n)
        dim = len(n)
        if dim not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {dim}")
        if any(v < 2 for v in n):
            raise ValueError(f"need at least 2 cells per axis, got {n}")
        origin = tuple(float(v) for v in (self.origin or (0.0,) * dim))
        extent = tuple(float(v) for v in (self.extent or (1.0,) * dim))
        if len(origin) != dim or len(extent) != dim:
            raise ValueError("origin/extent must have one entry per axis")
        if any(e <= 0 for e in extent):
            raise ValueError(f"extent must be positive, got {extent}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "extent", extent)

    @classmethod
    def uniform(cls, dim: int, n: int, length: float = 1.0) -> "MacGrid":
        return cls((n,) * dim, (0.0,) * dim, (length,) * dim)

    @property
    def dim(self) -> int:
        return len(self.n)

    @cached_property
    def h(self) -> tuple[float, ...]:
        return tuple(e / m for e, m in zip(self.extent, self.n))

    @cached_property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    def same_as(self, other: "MacGrid") -> bool:
        return self is other or (
            self.n == other.n and self.origin == other.origin and self.extent == other.extent
        )

    # -- layout -----------------------------------------------------------
    def shape(self, loc: int) -> tuple[int, ...]:
        return tuple(m + 3 if a == loc else m + 2 for a, m in enumerate(self.n))

    def interior(self, loc: int) -> tuple[slice, ...]:
        """Slices selecting the unknowns (interior faces / all cells)."""
        return tuple(slice(2, m + 1) if a == loc else slice(1, m + 1) for a, m in enumerate(self.n))

    def owned(self, loc: int) -> tuple[slice, ...]:
        """Slices selecting every non-ghost node (boundary faces included)."""
        return tuple(slice(1, m + 2) if a == loc else slice(1, m + 1) for a, m in enumerate(self.n))

    def interior_shape(self, loc: int) -> tuple[int, ...]:
        return tuple(m - 1 if a == loc else m for a, m in enumerate(self.n))

    def size(self, loc: int) -> int:
        return int(np.prod(self.interior_shape(loc)))

    def axis_coords(self, loc: int, axis: int) -> np.ndarray:
        """Coordinates of all stored entries (ghosts included) along ``axis``."""
        m, h, x0 = self.n[axis], self.h[axis], self.origin[axis]
        if axis == loc:
            return x0 + (np.arange(m + 3) - 1.0) * h
        return x0 + (np.arange(m + 2) - 0.5) * h

    def mesh(self, loc: int) -> tuple[np.ndarray, ...]:
        """Broadcastable coordinate arrays for every stored entry of ``loc``."""
        key = ("mesh", loc)
        if key not in self._cache:
            axes = [self.axis_coords(loc, a) for a in range(self.dim)]
            self._cache[key] = tuple(np.meshgrid(*axes, indexing="ij", sparse=True))
        return self._cache[key]

    # -- factories ----------------------------------------------------------
    def scalar(self, loc: int = CELL) -> "ScalarField":
        return ScalarField(self, loc, np.zeros(self.shape(loc)))

    def velocity(self) -> "VelocityField":
        return VelocityField(tuple(self.scalar(k) for k in range(self.dim)))

    def sample(self, loc: int, func: ScalarTrace, t: float) -> "ScalarField":
        """Evaluate ``func`` at every stored node (ghosts included)."""
        f = self.scalar(loc)
        f.data[...] = np.broadcast_to(func(self.mesh(loc), t), f.data.shape)
        return f

    def sample_velocity(self, func: VectorTrace, t: float) -> "VelocityField":
        return VelocityField(
            tuple(self.sample(k, lambda X, s, k=k: func(k, X, s), t) for k in range(self.dim))
        )


class ScalarField:
    """Ghosted array tied to a grid location (cell centre or a face family)."""

    __slots__ = ("grid", "loc", "data")

    def __init__(self, grid: MacGrid, loc: int, data: np.ndarray):
        if data.shape != grid.shape(loc):
            raise GridMismatchError(
                f"array shape {data.shape} does not match location {loc} shape {grid.shape(loc)}"
            )
        self.grid = grid
        self.loc = loc
        self.data = data

    @property
    def interior(self) -> np.ndarray:
        return self.data[self.grid.interior(self.loc)]

    @interior.setter
    def interior(self, values) -> None:
        self.data[self.grid.interior(self.loc)] = values

    @property
    def owned(self) -> np.ndarray:
        return self.data[self.grid.owned(self.loc)]

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.loc, self.data.copy())

    def _check(self, other: "ScalarField") -> None:
        if other.loc != self.loc or not self.grid.same_as(other.grid):
            raise GridMismatchError("fields live on different grids or locations")

    def _binary(self, other, op):
        if isinstance(other, ScalarField):
            self._check(other)
            return ScalarField(self.grid, self.loc, op(self.data, other.data))
        return ScalarField(self.grid, self.loc, op(self.data, other))

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __rmul__ = __mul__
    __radd__ = __add__

    def __truediv__(self, other):
        return self._binary(other, np.true_divide)

    def __neg__(self):
        return ScalarField(self.grid, self.loc, -self.data)

    def __repr__(self):
        where = "cell" if self.loc == CELL else f"face{self.loc}"
        return f"ScalarField({where}, n={self.grid.n})"


class VelocityField:
    """Tuple of face-located components, component k normal to axis k."""

    __slots__ = ("components",)

    def __init__(self, components: Sequence[ScalarField]):
        comps = tuple(components)
        grid = comps[0].grid
        if len(comps) != grid.dim:
            raise GridMismatchError(f"expected {grid.dim} components, got {len(comps)}")
        for k, c in enumerate(comps):
            if c.loc != k or not c.grid.same_as(grid):
                raise GridMismatchError(f"component {k} is not located on faces normal to axis {k}")
        self.components = comps

    @property
    def grid(self) -> MacGrid:
        return self.components[0].grid

    def __getitem__(self, k: int) -> ScalarField:
        return self.components[k]

    def __iter__(self):
        return iter(self.components)

    def __len__(self):
        return len(self.components)

    def copy(self) -> "VelocityField":
        return VelocityField(tuple(c.copy() for c in self.components))

    def _binary(self, other, op):
        if isinstance(other, VelocityField):
            return VelocityField(tuple(op(a, b) for a, b in zip(self, other)))
        return VelocityField(tuple(op(a, other) for a in self))

    def __add__(self, other):
        return self._binary(other, lambda a, b: a + b)

    def __sub__(self, other):
        return self._binary(other, lambda a, b: a - b)

    def __mul__(self, other):
        return self._binary(other, lambda a, b: a * b)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(other, lambda a, b: a / b)

    def __neg__(self):
        return VelocityField(tuple(-c for c in self))

    def all_finite(self) -> bool:
        return all(np.isfinite(c.data).all() for c in self)


# -- boundary handling --------------------------------------------------------


def _slab(ndim: int, axis: int, index) -> tuple:
    sl = [slice(None)] * ndim
    sl[axis] = index
    return tuple(sl)


def boundary_values(grid: MacGrid, loc: int, trace: ScalarTrace | None, t: float) -> list:
    """Trace values needed by :func:`fill_boundary`, one ``(lo, hi)`` pair per axis.

    For the normal axis the values sit on the boundary faces; for the other
    axes they sit on the wall, aligned with the stored nodes.
    """
    if trace is None:
        return [None] * grid.dim
    X = grid.mesh(loc)
    out = []
    for a in range(grid.dim):
        lo_x = grid.origin[a]
        hi_x = grid.origin[a] + grid.extent[a]
        pair = []
        for wall in (lo_x, hi_x):
            Xw = list(X)
            Xw[a] = np.full((1,) * grid.dim, wall)
            shape = list(grid.shape(loc))
            shape[a] = 1
            pair.append(np.broadcast_to(trace(tuple(Xw), t), shape).copy())
        out.append(tuple(pair))
    return out


def fill_boundary(f: ScalarField, values: list) -> None:
    """Write boundary faces and ghost layers from precomputed trace values."""
    g = f.grid
    d = f.data
    nd = g.dim
    # normal axis first so tangential mirrors at boundary faces see the trace
    order = sorted(range(nd), key=lambda a: a != f.loc)
    for a in order:
        m = g.n[a]
        pair = values[a]
        if a == f.loc:
            if pair is None:
                d[_slab(nd, a, slice(1, 2))] = 0.0
                d[_slab(nd, a, slice(m + 1, m + 2))] = 0.0
            else:
                d[_slab(nd, a, slice(1, 2))] = pair[0]
                d[_slab(nd, a, slice(m + 1, m + 2))] = pair[1]
            d[_slab(nd, a, 0)] = 2.0 * d[_slab(nd, a, 1)] - d[_slab(nd, a, 2)]
            d[_slab(nd, a, m + 2)] = 2.0 * d[_slab(nd, a, m + 1)] - d[_slab(nd, a, m)]
        else:
            lo = 0.0 if pair is None else 2.0 * pair[0][_slab(nd, a, 0)]
            hi = 0.0 if pair is None else 2.0 * pair[1][_slab(nd, a, 0)]
            d[_slab(nd, a, 0)] = lo - d[_slab(nd, a, 1)]
            d[_slab(nd, a, m + 1)] = hi - d[_slab(nd, a, m)]


def apply_dirichlet(f: ScalarField, trace: ScalarTrace | None, t: float = 0.0) -> None:
    """Fill ``f``'s ghost layer (and boundary faces) from a Dirichlet trace.

    ``trace=None`` means homogeneous data.
    """
    fill_boundary(f, boundary_values(f.grid, f.loc, trace, t))


def apply_dirichlet_velocity(u: VelocityField, trace: VectorTrace | None, t: float = 0.0) -> None:
    for k, c in enumerate(u):
        apply_dirichlet(c, None if trace is None else (lambda X, s, k=k: trace(k, X, s)), t)


def fill_zero_gradient(p: ScalarField) -> None:
    """Copy the first interior layer into the ghosts (pressure has no BC)."""
    g = p.grid
    d = p.data
    for a in range(g.dim):
        m = g.n[a]
        d[_slab(g.dim, a, 0)] = d[_slab(g.dim, a, 1)]
        d[_slab(g.dim, a, m + 1)] = d[_slab(g.dim, a, m)]


# -- raw-array kernels used by the steppers ----------------------------------


def face_to_cell(v: ScalarField) -> np.ndarray:
    """``D_k v`` for a face field normal to ``k``: difference along ``k`` at cells.

    Returns an array of cell-interior shape (no ghosts).
    """
    g = v.grid
    k = v.loc
    sl = list(g.interior(k))
    sl[k] = slice(1, g.n[k] + 2)
    return np.diff(v.data[tuple(sl)], axis=k) / g.h[k]


def cell_to_face(q: np.ndarray, k: int, h: float) -> np.ndarray:
    """Interior-face difference along ``k`` of a cell array without ghosts."""
    return np.diff(q, axis=k) / h


def second_difference(v: ScalarField, axis: int, kappa=1.0) -> np.ndarray:
    """``d_a (kappa d_a v)`` at the unknowns of ``v`` (interior-shaped array).

    ``kappa`` is a scalar or an array located at the flux points: cell
    centres when ``axis`` is ``v``'s normal axis, faces along ``axis``
    otherwise.
    """
    g = v.grid
    sl = list(g.interior(v.loc))
    if axis == v.loc:
        sl[axis] = slice(1, g.n[axis] + 2)
    else:
        sl[axis] = slice(0, g.n[axis] + 2)
    flux = np.diff(v.data[tuple(sl)], axis=axis) / g.h[axis]
    if not np.isscalar(kappa):
        flux = flux * kappa
    elif kappa != 1.0:
        flux *= kappa
    return np.diff(flux, axis=axis) / g.h[axis]


def _as_cell_coefficient(grid: MacGrid, varpi) -> np.ndarray | float:
    if isinstance(varpi, ScalarField):
        if varpi.loc != CELL:
            raise GridMismatchError("coefficient fields must be cell-centred")
        return varpi.interior
    if np.isscalar(varpi):
        return float(varpi)
    arr = np.asarray(varpi, dtype=float)
    if arr.shape != grid.n:
        raise GridMismatchError(f"cell coefficient must have shape {grid.n}, got {arr.shape}")
    return arr


# -- public operators ---------------------------------------------------------


def divergence(u: VelocityField) -> ScalarField:
    """Cell-centred MAC divergence, ghosts left at zero."""
    g = u.grid
    out = g.scalar(CELL)
    acc = face_to_cell(u[0])
    for k in range(1, g.dim):
        acc = acc + face_to_cell(u[k])
    out.interior = acc
    return out


def gradient(p: ScalarField) -> VelocityField:
    """Face-located gradient of a cell field on every owned face.

    Interior faces only use interior pressure values; boundary faces use the
    ghost layer, which must have been filled (see :func:`fill_zero_gradient`).
    """
    if p.loc != CELL:
        raise GridMismatchError("gradient expects a cell-centred field")
    g = p.grid
    comps = []
    for k in range(g.dim):
        c = g.scalar(k)
        sl = list(g.interior(CELL))
        sl[k] = slice(0, g.n[k] + 2)
        c.data[g.owned(k)] = np.diff(p.data[tuple(sl)], axis=k) / g.h[k]
        comps.append(c)
    return VelocityField(comps)


def div_kappa_grad(v: ScalarField, kappa: Sequence) -> ScalarField:
    """``sum_k d_k(kappa_k d_k v)`` at ``v``'s unknowns (5/7-point stencil)."""
    g = v.grid
    if len(kappa) != g.dim:
        raise ValueError(f"need {g.dim} diffusion coefficients, got {len(kappa)}")
    for kap in kappa:
        if np.any(np.asarray(kap) < 0):
            raise ValueError("diffusion coefficients must be non-negative")
    out = g.scalar(v.loc)
    acc = np.zeros(g.interior_shape(v.loc))
    for a, kap in enumerate(kappa):
        if np.isscalar(kap) and kap == 0:
            continue
        acc += second_difference(v, a, kap)
    out.interior = acc
    return out


def mixed_derivative(i: int, j: int, v: ScalarField, varpi=1.0) -> ScalarField:
    """``d_i (varpi d_j v)`` for ``v`` on faces normal to ``j``, result on faces normal to ``i``.

    ``v`` is differenced along ``j`` to cell centres, scaled by ``varpi``
    (constant or cell field) and differenced along ``i`` onto the interior
    faces of component ``i``: the compact four-point MAC cross stencil.
    """
    if i == j:
        raise ValueError("mixed_derivative needs i != j; use div_kappa_grad for d_i d_i")
    if v.loc != j:
        raise GridMismatchError(f"operand must live on faces normal to axis {j}")
    g = v.grid
    w = _as_cell_coefficient(g, varpi)
    out = g.scalar(i)
    out.interior = cell_to_face(w * face_to_cell(v), i, g.h[i])
    return out


def _average_to(u_a: ScalarField, k: int) -> np.ndarray:
    """Average component ``a`` onto the interior faces of component ``k``."""
    g = u_a.grid
    a = u_a.loc
    d = u_a.data
    sl = list(g.interior(k))
    # along a: component a has nodes, target has cells -> average node pairs
    sl_lo = list(sl)
    sl_hi = list(sl)
    sl_lo[a] = slice(1, g.n[a] + 1)
    sl_hi[a] = slice(2, g.n[a] + 2)
    # along k: component a has cells, target has interior nodes -> average neighbours
    sl_lo_k = slice(1, g.n[k])
    sl_hi_k = slice(2, g.n[k] + 1)
    parts = []
    for s in (sl_lo, sl_hi):
        for sk in (sl_lo_k, sl_hi_k):
            s2 = list(s)
            s2[k] = sk
            parts.append(d[tuple(s2)])
    return 0.25 * (parts[0] + parts[1] + parts[2] + parts[3])


def advect(u: VelocityField) -> VelocityField:
    """Explicit ``(u . grad) u`` with centred differences on the faces."""
    g = u.grid
    comps = []
    for k in range(g.dim):
        uk = u[k]
        d = uk.data
        acc = np.zeros(g.interior_shape(k))
        for a in range(g.dim):
            sl_m = list(g.interior(k))
            sl_p = list(g.interior(k))
            start = sl_m[a].start
            stop = sl_m[a].stop
            sl_m[a] = slice(start - 1, stop - 1)
            sl_p[a] = slice(start + 1, stop + 1)
            deriv = (d[tuple(sl_p)] - d[tuple(sl_m)]) / (2.0 * g.h[a])
            carrier = uk.interior if a == k else _average_to(u[a], k)
            acc += carrier * deriv
        c = g.scalar(k)
        c.interior = acc
        comps.append(c)
    return VelocityField(comps)


def l2_norm(f: ScalarField) -> float:
    """``sqrt(sum f^2 * cell_volume)`` over every owned node.

    Boundary faces count with full weight, so a unit face field on the unit
    square has norm ``sqrt(1 + h)``; cell fields are exact.
    """
    vals = f.owned
    return float(np.sqrt(np.sum(vals * vals) * f.grid.cell_volume))


def l2_norm_vec(u: VelocityField) -> float:
    return float(np.sqrt(sum(l2_norm(c) ** 2 for c in u)))
