"""Artificial-compressibility time stepping for incompressible flow on MAC grids."""

from .kernels import BACKEND
from .mac import CELL, MacGrid, ScalarField, VelocityField
from .schemes import SCHEMES, SchemeConfig, SimState, energy, initial_state, solution

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CELL",
    "MacGrid",
    "SCHEMES",
    "ScalarField",
    "SchemeConfig",
    "SimState",
    "VelocityField",
    "energy",
    "initial_state",
    "solution",
]
