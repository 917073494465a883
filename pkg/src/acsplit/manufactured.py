"""Closed-form benchmark solutions, their forcing, and error measurement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mac import (
    CELL,
    MacGrid,
    ScalarField,
    VelocityField,
    divergence,
    l2_norm,
    l2_norm_vec,
)


class AnalyticCase:
    """A solenoidal velocity/pressure pair with analytic derivatives.

    Subclasses implement the component callables; coordinates ``X`` are a
    tuple of broadcastable arrays.
    """

    name = "case"
    dim = 2

    def velocity(self, k, X, t):
        raise NotImplementedError

    def velocity_dt(self, k, X, t):
        raise NotImplementedError

    def velocity_grad(self, k, X, t) -> list:
        """``[d_0 u_k, ..., d_{d-1} u_k]``."""
        raise NotImplementedError

    def velocity_laplacian(self, k, X, t):
        raise NotImplementedError

    def pressure(self, X, t):
        raise NotImplementedError

    def pressure_grad(self, X, t) -> list:
        raise NotImplementedError

    def divergence(self, X, t):
        return sum(self.velocity_grad(k, X, t)[k] for k in range(self.dim))

    def advection(self, k, X, t):
        """``((u . grad) u)_k``."""
        grad = self.velocity_grad(k, X, t)
        return sum(self.velocity(a, X, t) * grad[a] for a in range(self.dim))


class TrigCase2D(AnalyticCase):
    """``u = (sin x sin(y+t), cos x cos(y+t))``, ``p = cos x sin(y+t)``."""

    name = "mms2d"
    dim = 2

    def velocity(self, k, X, t):
        x, y = X[0], X[1]
        if k == 0:
            return np.sin(x) * np.sin(y + t)
        return np.cos(x) * np.cos(y + t)

    def velocity_dt(self, k, X, t):
        x, y = X[0], X[1]
        if k == 0:
            return np.sin(x) * np.cos(y + t)
        return -np.cos(x) * np.sin(y + t)

    def velocity_grad(self, k, X, t):
        x, y = X[0], X[1]
        if k == 0:
            return [np.cos(x) * np.sin(y + t), np.sin(x) * np.cos(y + t)]
        return [-np.sin(x) * np.cos(y + t), -np.cos(x) * np.sin(y + t)]

    def velocity_laplacian(self, k, X, t):
        return -2.0 * self.velocity(k, X, t)

    def pressure(self, X, t):
        return np.cos(X[0]) * np.sin(X[1] + t)

    def pressure_grad(self, X, t):
        x, y = X[0], X[1]
        return [-np.sin(x) * np.sin(y + t), np.cos(x) * np.cos(y + t)]


class TrigCase3D(AnalyticCase):
    """``u = (cos x sin y sin(z+t), sin x cos y sin(z+t), -2 sin x sin y cos(z+t))``,
    ``p = cos(x+y+z+t)``."""

    name = "mms3d"
    dim = 3

    def velocity(self, k, X, t):
        x, y, z = X
        if k == 0:
            return np.cos(x) * np.sin(y) * np.sin(z + t)
        if k == 1:
            return np.sin(x) * np.cos(y) * np.sin(z + t)
        return -2.0 * np.sin(x) * np.sin(y) * np.cos(z + t)

    def velocity_dt(self, k, X, t):
        x, y, z = X
        if k == 0:
            return np.cos(x) * np.sin(y) * np.cos(z + t)
        if k == 1:
            return np.sin(x) * np.cos(y) * np.cos(z + t)
        return 2.0 * np.sin(x) * np.sin(y) * np.sin(z + t)

    def velocity_grad(self, k, X, t):
        x, y, z = X
        if k == 0:
            return [
                -np.sin(x) * np.sin(y) * np.sin(z + t),
                np.cos(x) * np.cos(y) * np.sin(z + t),
                np.cos(x) * np.sin(y) * np.cos(z + t),
            ]
        if k == 1:
            return [
                np.cos(x) * np.cos(y) * np.sin(z + t),
                -np.sin(x) * np.sin(y) * np.sin(z + t),
                np.sin(x) * np.cos(y) * np.cos(z + t),
            ]
        return [
            -2.0 * np.cos(x) * np.sin(y) * np.cos(z + t),
            -2.0 * np.sin(x) * np.cos(y) * np.cos(z + t),
            2.0 * np.sin(x) * np.sin(y) * np.sin(z + t),
        ]

    def velocity_laplacian(self, k, X, t):
        # every component is a product of three unit-frequency sines/cosines
        return -3.0 * self.velocity(k, X, t)

    def pressure(self, X, t):
        return np.cos(X[0] + X[1] + X[2] + t)

    def pressure_grad(self, X, t):
        s = -np.sin(X[0] + X[1] + X[2] + t)
        return [s, s, s]


CASES = {"mms2d": TrigCase2D, "mms3d": TrigCase3D}


def get_case(name: str) -> AnalyticCase:
    try:
        return CASES[name]()
    except KeyError:
        raise ValueError(f"unknown case {name!r}; choose from {sorted(CASES)}") from None


def forcing_stokes(case: AnalyticCase, nu: float, k: int, X, t):
    """Component ``k`` of ``du/dt - nu Lap u + grad p``."""
    return (
        case.velocity_dt(k, X, t)
        - nu * case.velocity_laplacian(k, X, t)
        + case.pressure_grad(X, t)[k]
    )


def forcing_ns(case: AnalyticCase, nu: float, k: int, X, t):
    """Stokes forcing plus the advection term ``(u . grad) u``."""
    return forcing_stokes(case, nu, k, X, t) + case.advection(k, X, t)


@dataclass
class Problem:
    """Forcing and Dirichlet data handed to the steppers.

    ``forcing(k, X, t)`` and ``velocity_bc(k, X, t)``; ``None`` means zero.
    """

    forcing: object = None
    velocity_bc: object = None
    case: AnalyticCase | None = None


def manufactured_problem(case: AnalyticCase, nu: float, nonlinear: bool = False) -> Problem:
    f = forcing_ns if nonlinear else forcing_stokes
    return Problem(
        forcing=lambda k, X, t: f(case, nu, k, X, t),
        velocity_bc=case.velocity,
        case=case,
    )


def exact_velocity(grid: MacGrid, case: AnalyticCase, t: float) -> VelocityField:
    return grid.sample_velocity(case.velocity, t)


def exact_pressure(grid: MacGrid, case: AnalyticCase, t: float) -> ScalarField:
    return grid.sample(CELL, case.pressure, t)


def _mean_free(p: ScalarField) -> ScalarField:
    q = p.copy()
    q.data -= p.interior.mean()
    return q


@dataclass(frozen=True)
class ErrorTriple:
    velocity: float
    pressure: float
    divergence: float


def field_errors(u: VelocityField, p: ScalarField, u_ref: VelocityField, p_ref: ScalarField,
                 mean_adjust: bool = True) -> ErrorTriple:
    """L2 distances between two discrete states; divergence of the difference."""
    du = u - u_ref
    if mean_adjust:
        dp = _mean_free(p) - _mean_free(p_ref)
    else:
        dp = p - p_ref
    return ErrorTriple(l2_norm_vec(du), l2_norm(dp), l2_norm(divergence(du)))


def evaluate_errors(u: VelocityField, p: ScalarField, case: AnalyticCase, t: float,
                    mean_adjust: bool = True) -> ErrorTriple:
    """Errors against the sampled exact solution; the divergence entry is ``||div u||``."""
    g = u.grid
    w = exact_velocity(g, case, t)
    q = exact_pressure(g, case, t)
    err = field_errors(u, p, w, q, mean_adjust)
    return ErrorTriple(err.velocity, err.pressure, l2_norm(divergence(u)))
