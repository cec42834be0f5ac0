"""Manufactured-solution convergence study for the full-order solver.

The exact solution is ``u = t^2 cos(pi x) cos(pi y)`` with unit diffusivity.
For the temporal study the forcing uses the discrete Laplacian eigenvalue of
``cos(pi x) cos(pi y)`` (an exact eigenvector of the Neumann stencil), so the
spatial error vanishes and only the L1 error remains. The spatial study uses
the continuum eigenvalue ``2 pi^2`` with a small time step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..tfpde import ForwardSolver, SpatialGrid, TimeGrid

__all__ = ["ConvergenceStudy", "manufactured_error", "observed_orders", "temporal_study", "spatial_study"]


def _mode(grid: SpatialGrid) -> np.ndarray:
    pts = grid.points
    return np.cos(np.pi * pts[:, 0]) * np.cos(np.pi * pts[:, 1])


def discrete_eigenvalue(grid: SpatialGrid) -> float:
    """``lam_h`` with ``L phi = -lam_h phi`` for ``phi = cos(pi x) cos(pi y)``."""
    return sum((2.0 - 2.0 * math.cos(math.pi * h)) / h**2 for h in (grid.hx, grid.hy))


def manufactured_error(alpha: float, n: int, n_steps: int, discrete_forcing: bool = False) -> float:
    """Max-norm error at ``T = 1`` on an ``n x n`` grid with ``n_steps`` steps."""
    grid = SpatialGrid(n, n)
    tgrid = TimeGrid.from_final_time(1.0, n_steps)
    phi = _mode(grid)
    lam = discrete_eigenvalue(grid) if discrete_forcing else 2.0 * math.pi**2
    t = tgrid.times
    g = 2.0 * t ** (2.0 - alpha) / math.gamma(3.0 - alpha) + lam * t**2
    traj = ForwardSolver(grid, tgrid, alpha).solve(np.outer(phi, g))
    return float(np.max(np.abs(traj.values[:, -1] - phi)))


def observed_orders(sizes, errors) -> np.ndarray:
    """Pairwise rates ``log(e_i / e_{i+1}) / log(s_i / s_{i+1})``."""
    s = np.asarray(sizes, dtype=float)
    e = np.asarray(errors, dtype=float)
    return np.log(e[:-1] / e[1:]) / np.log(s[:-1] / s[1:])


@dataclass(frozen=True)
class ConvergenceStudy:
    kind: str  # "temporal" | "spatial"
    alpha: float
    sizes: tuple  # dt or h values
    errors: tuple

    @property
    def orders(self) -> np.ndarray:
        return observed_orders(self.sizes, self.errors)

    @property
    def order(self) -> float:
        """Least-squares slope of log error against log size."""
        return float(np.polyfit(np.log(self.sizes), np.log(self.errors), 1)[0])


def temporal_study(alpha: float, steps=(25, 50, 100, 200), n: int = 11) -> ConvergenceStudy:
    errs = [manufactured_error(alpha, n, N, discrete_forcing=True) for N in steps]
    return ConvergenceStudy("temporal", alpha, tuple(1.0 / N for N in steps), tuple(errs))


def spatial_study(alpha: float = 0.5, cells=(10, 20, 40), n_steps: int = 1000) -> ConvergenceStudy:
    errs = [manufactured_error(alpha, c + 1, n_steps) for c in cells]
    return ConvergenceStudy("spatial", alpha, tuple(1.0 / c for c in cells), tuple(errs))
