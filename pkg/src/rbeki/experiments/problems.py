"""Forward problems behind the experiments.

Each problem maps a parameter vector to a full-order :class:`~rbeki.tfpde.Trajectory`
on a given discretization, so the same definition drives the coarse inversion
model and the fine data-generating model.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..eki import PriorSpec
from ..tfpde import (
    ForwardSolver,
    ObservationSetup,
    SpatialGrid,
    TimeGrid,
    Trajectory,
    bump_source_nodes,
    observe,
    uniform_sensor_grid,
)
from .config import ExperimentConfig
from .kl import KlField, kl_expansion

__all__ = ["Discretization", "Problem", "make_problem", "sensor_layout"]


def sensor_layout(n: int, grid_n: int) -> np.ndarray:
    """``n x n`` uniform sensor array lying on the nodes of a ``grid_n`` grid.

    Uses the boundary-to-boundary layout when its spacing is a whole number of
    cells; otherwise the widest on-node uniform layout centered in the domain
    (7 sensors on a 21-node axis sit at 0.05, 0.20, ..., 0.95).
    """
    cells = grid_n - 1
    if n == 1:
        return np.array([[0.5, 0.5]])
    if cells % (n - 1) == 0:
        return uniform_sensor_grid(n)
    step = cells // (n - 1)
    if step == 0:
        raise ValueError(f"cannot place {n} sensors per axis on {grid_n} nodes")
    start = (cells - step * (n - 1)) // 2
    s = (start + step * np.arange(n)) / cells
    X, Y = np.meshgrid(s, s)
    return np.column_stack([X.ravel(), Y.ravel()])


@dataclass(frozen=True)
class Discretization:
    grid: SpatialGrid
    tgrid: TimeGrid
    setup: ObservationSetup


class Problem:
    """Parameter-to-state map for one experiment on coarse and fine grids."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        sensors = sensor_layout(cfg.sensors_per_axis, cfg.coarse_n)
        self.coarse = self._disc(cfg.coarse_n, cfg.coarse_steps, sensors)
        self.fine = self._disc(cfg.fine_n, cfg.fine_steps, sensors)
        self._solvers = {}
        self.clamp_count = 0

    def _disc(self, n, steps, sensors) -> Discretization:
        grid = SpatialGrid(n, n)
        tgrid = TimeGrid.from_final_time(self.cfg.final_time, steps)
        return Discretization(grid, tgrid, ObservationSetup(grid, tgrid, sensors, self.cfg.sensor_times))

    @property
    def dim(self) -> int:
        return self.cfg.param_dim

    @property
    def prior(self) -> PriorSpec:
        if self.cfg.problem == "diffusivity-kl":
            return PriorSpec.standard_normal(self.dim)
        return PriorSpec.uniform(np.zeros(self.dim), np.ones(self.dim))

    @cached_property
    def kl(self) -> KlField:
        c = self.cfg
        return kl_expansion(c.kl_sigma2, c.kl_length, c.kl_modes, self.coarse.grid)

    def _source(self, disc: Discretization, center) -> np.ndarray:
        return bump_source_nodes(center, disc.grid, disc.tgrid.times)

    def _solver(self, disc: Discretization, alpha: float, kappa=None) -> ForwardSolver:
        if kappa is not None:
            return ForwardSolver(disc.grid, disc.tgrid, alpha, kappa)
        key = (disc.grid.nx, disc.tgrid.n_steps, alpha)
        if key not in self._solvers:
            self._solvers[key] = ForwardSolver(disc.grid, disc.tgrid, alpha)
        return self._solvers[key]

    def clamp_alpha(self, alpha: float) -> float:
        eps = self.cfg.alpha_clamp
        a = min(max(float(alpha), eps), 1.0 - eps)
        if a != alpha:
            self.clamp_count += 1
        return a

    def kappa_nodes(self, theta, disc: Discretization | None = None) -> np.ndarray:
        disc = disc or self.coarse
        pts = None if disc.grid == self.coarse.grid else disc.grid.points
        return self.kl.kappa(theta, pts)

    def solve(self, theta, fine: bool = False) -> Trajectory:
        """Full-order trajectory at ``theta`` on the coarse (default) or fine grid."""
        disc = self.fine if fine else self.coarse
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"expected a parameter of length {self.dim}")
        p = self.cfg.problem
        if p == "source2d":
            return self._solver(disc, self.cfg.alpha).solve(self._source(disc, theta))
        if p == "source2d-alpha":
            # alpha changes the system matrix, so no factorization cache here
            alpha = self.clamp_alpha(theta[2])
            solver = ForwardSolver(disc.grid, disc.tgrid, alpha)
            return solver.solve(self._source(disc, theta[:2]))
        kappa = self.kappa_nodes(theta, disc)
        src = self._source(disc, self.cfg.source_center)
        return self._solver(disc, self.cfg.alpha, kappa).solve(src)

    def observe(self, theta, fine: bool = False) -> np.ndarray:
        disc = self.fine if fine else self.coarse
        return observe(self.solve(theta, fine), disc.setup)

    def full_forward(self):
        """Batch coarse full-order forward map ``(N, d) -> (N, m)``."""

        def fwd(thetas):
            thetas = np.atleast_2d(thetas)
            return np.array([self.observe(t) for t in thetas])

        return fwd

    def sample_training(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.cfg.problem == "diffusivity-kl":
            return rng.standard_normal((n, self.dim))
        return rng.uniform(0.0, 1.0, size=(n, self.dim))

    def train_time_indices(self) -> np.ndarray:
        s = self.cfg.train_time_stride
        return np.arange(s, self.coarse.tgrid.n_steps + 1, s)


def make_problem(cfg: ExperimentConfig) -> Problem:
    return Problem(cfg)
