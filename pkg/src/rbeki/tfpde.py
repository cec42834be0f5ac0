"""Full-order solver for the time-fractional diffusion equation on the unit square.

The model is

    D_t^alpha u = div(kappa grad u) + f     in [0, 1]^2 x (0, T]
    grad u . n  = 0                          on the boundary
    u(x, 0)     = u0(x)

where ``D_t^alpha`` is the Caputo derivative of order ``0 < alpha < 1``.
Space is discretized with a conservative 5-point finite-difference stencil on a
uniform node grid, time with the implicit L1 scheme (full history).

Node ordering is row-major with x varying fastest: node ``(i, j)`` with
``x = i * hx`` and ``y = j * hy`` has flat index ``j * nx + i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "SpatialGrid",
    "TimeGrid",
    "FractionalModel",
    "Trajectory",
    "ObservationSetup",
    "ForwardSolver",
    "l1_weights",
    "assemble_diffusion_operator",
    "solve_forward",
    "observe",
    "gaussian_bump_source",
    "bump_source_nodes",
    "uniform_sensor_grid",
]

_SNAP_TOL = 1e-9


class SolverError(RuntimeError):
    """Raised when a time step of the forward solve cannot be completed."""


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform node grid on [0, 1]^2."""

    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError(f"grid needs at least 3 nodes per axis, got {self.nx}x{self.ny}")

    @property
    def hx(self) -> float:
        return 1.0 / (self.nx - 1)

    @property
    def hy(self) -> float:
        return 1.0 / (self.ny - 1)

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.nx)

    @property
    def y(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.ny)

    @property
    def points(self) -> np.ndarray:
        """(n_nodes, 2) node coordinates in flat order."""
        X, Y = np.meshgrid(self.x, self.y)  # shape (ny, nx)
        return np.column_stack([X.ravel(), Y.ravel()])

    def index_of(self, point) -> int:
        """Flat index of the node at ``point``; raises if the point is off-grid."""
        px, py = float(point[0]), float(point[1])
        fi, fj = px / self.hx, py / self.hy
        i, j = int(round(fi)), int(round(fj))
        if abs(fi - i) > _SNAP_TOL or abs(fj - j) > _SNAP_TOL or not (
            0 <= i < self.nx and 0 <= j < self.ny
        ):
            raise ValueError(f"point {point!r} is not a node of the {self.nx}x{self.ny} grid")
        return j * self.nx + i

    def field(self, func: Callable) -> np.ndarray:
        """Evaluate ``func(x, y)`` (vectorized) at every node."""
        pts = self.points
        vals = np.asarray(func(pts[:, 0], pts[:, 1]), dtype=float)
        return np.broadcast_to(vals, (self.n_nodes,)).copy()


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid ``t_k = k * dt`` for ``k = 0..n_steps``."""

    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")

    @classmethod
    def from_final_time(cls, T: float, n_steps: int) -> "TimeGrid":
        return cls(T / n_steps, n_steps)

    @property
    def T(self) -> float:
        return self.dt * self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def index_of(self, t: float) -> int:
        f = t / self.dt
        k = int(round(f))
        if abs(f - k) > 1e-7 or not 0 <= k <= self.n_steps:
            raise ValueError(f"time {t!r} is not a node of the time grid (dt={self.dt})")
        return k


@dataclass(frozen=True)
class FractionalModel:
    """Coefficients of the fractional diffusion problem.

    ``kappa`` and ``initial`` are callables ``(x, y) -> array`` and ``source`` is
    ``(x, y, t) -> array``; all are evaluated vectorized over node coordinates.
    ``kappa`` may also be given directly as an array of nodal values.
    """

    alpha: float
    kappa: Callable | np.ndarray | float = 1.0
    source: Callable | None = None
    initial: Callable | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")

    def kappa_nodes(self, grid: SpatialGrid) -> np.ndarray:
        k = self.kappa
        if callable(k):
            k = grid.field(k)
        k = np.asarray(k, dtype=float)
        if k.ndim == 0:
            k = np.full(grid.n_nodes, float(k))
        if k.shape != (grid.n_nodes,):
            raise ValueError(f"kappa has {k.size} nodal values, grid has {grid.n_nodes}")
        if not np.all(k > 0):
            raise ValueError("kappa must be positive at every grid node")
        return k.copy()


@dataclass(frozen=True)
class Trajectory:
    """Nodal solution history; column ``k`` is the state at ``times[k]``."""

    values: np.ndarray
    times: np.ndarray
    grid: SpatialGrid

    def __post_init__(self):
        if self.values.shape != (self.grid.n_nodes, self.times.size):
            raise ValueError("trajectory shape does not match grid and times")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("trajectory contains non-finite values")

    def at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-7:
            raise ValueError(f"time {t} not stored in trajectory")
        return self.values[:, k]

    def to_csv(self, path) -> None:
        header = ",".join(repr(float(t)) for t in self.times)
        np.savetxt(path, self.values, delimiter=",", header=header, comments="")


@dataclass(frozen=True)
class ObservationSetup:
    """Point sensors sampled at selected times.

    The observation vector is ordered time-major: all sensors at the first
    sensor time, then all sensors at the second time, and so on.
    """

    grid: SpatialGrid
    tgrid: TimeGrid
    sensor_locations: np.ndarray
    sensor_times: np.ndarray
    noise_std: float = 1.0
    node_indices: np.ndarray = field(init=False, repr=False)
    time_indices: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        locs = np.atleast_2d(np.asarray(self.sensor_locations, dtype=float))
        times = np.atleast_1d(np.asarray(self.sensor_times, dtype=float))
        if not self.noise_std > 0:
            raise ValueError("noise_std must be positive")
        if np.any(times <= 0) or np.any(times > self.tgrid.T + 1e-12):
            raise ValueError("sensor times must lie in (0, T]")
        object.__setattr__(self, "sensor_locations", locs)
        object.__setattr__(self, "sensor_times", times)
        object.__setattr__(
            self, "node_indices", np.array([self.grid.index_of(p) for p in locs], dtype=int)
        )
        object.__setattr__(
            self, "time_indices", np.array([self.tgrid.index_of(t) for t in times], dtype=int)
        )

    @property
    def n_sensors(self) -> int:
        return self.node_indices.size

    @property
    def m(self) -> int:
        return self.n_sensors * self.time_indices.size

    @property
    def covariance(self) -> np.ndarray:
        return self.noise_std**2 * np.eye(self.m)

    def with_noise(self, noise_std: float) -> "ObservationSetup":
        return ObservationSetup(
            self.grid, self.tgrid, self.sensor_locations, self.sensor_times, noise_std
        )

    def on_grid(self, grid: SpatialGrid, tgrid: TimeGrid) -> "ObservationSetup":
        """Same sensors re-indexed on another discretization."""
        return ObservationSetup(grid, tgrid, self.sensor_locations, self.sensor_times, self.noise_std)


def uniform_sensor_grid(n: int) -> np.ndarray:
    """``n x n`` sensors covering [0, 1]^2 (boundary included), flat order as the grid."""
    s = np.linspace(0.0, 1.0, n)
    X, Y = np.meshgrid(s, s)
    return np.column_stack([X.ravel(), Y.ravel()])


def l1_weights(alpha: float, n: int) -> np.ndarray:
    """L1 convolution weights ``b_j = (j+1)^(1-alpha) - j^(1-alpha)``, j = 0..n-1."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if n < 1:
        raise ValueError("n must be >= 1")
    j = np.arange(n + 1, dtype=float)
    p = j ** (1.0 - alpha)
    return np.diff(p)


def _face_kappa(k0: np.ndarray, k1: np.ndarray) -> np.ndarray:
    return 2.0 * k0 * k1 / (k0 + k1)


def assemble_diffusion_operator(grid: SpatialGrid, kappa) -> sp.csr_matrix:
    """Sparse discretization of ``div(kappa grad u)`` with homogeneous Neumann BCs.

    Face diffusivities are harmonic means of the adjacent nodal values. Boundary
    rows use a mirrored ghost node, so every row sums to zero.
    """
    kappa = np.asarray(kappa, dtype=float)
    if kappa.ndim == 0:
        kappa = np.full(grid.n_nodes, float(kappa))
    if kappa.shape != (grid.n_nodes,):
        raise ValueError("kappa must have one value per grid node")
    if not np.all(kappa > 0) or not np.all(np.isfinite(kappa)):
        raise ValueError("kappa must be positive and finite at every node")

    nx, ny = grid.nx, grid.ny
    K = kappa.reshape(ny, nx)
    idx = np.arange(grid.n_nodes).reshape(ny, nx)
    rows, cols, vals = [], [], []

    def couple(src, dst, coef):
        # row src gets +coef at dst and -coef on the diagonal
        rows.extend([src.ravel(), src.ravel()])
        cols.extend([dst.ravel(), src.ravel()])
        vals.extend([coef.ravel(), -coef.ravel()])

    # x-direction faces between (j, i) and (j, i+1)
    kf = _face_kappa(K[:, :-1], K[:, 1:]) / grid.hx**2
    wx = np.ones_like(kf)
    w_right = wx.copy()
    w_right[:, 0] = 2.0  # ghost mirror doubles the only face at i = 0
    w_left = wx.copy()
    w_left[:, -1] = 2.0  # and at i = nx - 1
    couple(idx[:, :-1], idx[:, 1:], w_right * kf)
    couple(idx[:, 1:], idx[:, :-1], w_left * kf)

    kf = _face_kappa(K[:-1, :], K[1:, :]) / grid.hy**2
    w_up = np.ones_like(kf)
    w_up[0, :] = 2.0
    w_down = np.ones_like(kf)
    w_down[-1, :] = 2.0
    couple(idx[:-1, :], idx[1:, :], w_up * kf)
    couple(idx[1:, :], idx[:-1, :], w_down * kf)

    L = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.n_nodes, grid.n_nodes),
    )
    return L.tocsr()


class ForwardSolver:
    """Reusable L1 time stepper for a fixed (grid, kappa, dt, alpha).

    The system matrix ``d_alpha * I - L`` is factorized once at construction.
    """

    def __init__(self, grid: SpatialGrid, tgrid: TimeGrid, alpha: float, kappa=1.0):
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
        self.grid = grid
        self.tgrid = tgrid
        self.alpha = float(alpha)
        kappa = np.asarray(kappa, dtype=float)
        if kappa.ndim == 0:
            kappa = np.full(grid.n_nodes, float(kappa))
        self.kappa = kappa
        self.L = assemble_diffusion_operator(grid, kappa)
        self.d_alpha = tgrid.dt ** (-alpha) / math.gamma(2.0 - alpha)
        b = l1_weights(alpha, tgrid.n_steps)
        self.b = b
        self.history_coef = b[:-1] - b[1:]  # c_j = b_{j-1} - b_j, j = 1..n-1
        A = (self.d_alpha * sp.identity(grid.n_nodes, format="csc") - self.L).tocsc()
        self._lu = spla.splu(A)

    def solve(self, source: Callable | np.ndarray | None = None, initial=None) -> Trajectory:
        """Run all time steps.

        ``source`` is a callable ``f(x, y, t)``, an array of nodal values of
        shape ``(n_nodes, n_steps + 1)``, or None for a zero source.
        """
        grid, tgrid = self.grid, self.tgrid
        n, N = grid.n_nodes, tgrid.n_steps
        times = tgrid.times
        U = np.empty((n, N + 1))
        if initial is None:
            U[:, 0] = 0.0
        elif callable(initial):
            U[:, 0] = grid.field(initial)
        else:
            U[:, 0] = np.asarray(initial, dtype=float)

        F = _source_matrix(source, grid, times)
        c, b, d = self.history_coef, self.b, self.d_alpha
        for k in range(1, N + 1):
            # sum_{j=1}^{k-1} c_j u^{k-j} + b_{k-1} u^0
            hist = b[k - 1] * U[:, 0]
            if k > 1:
                hist = hist + U[:, k - 1 : 0 : -1] @ c[: k - 1]
            rhs = d * hist
            if F is not None:
                rhs = rhs + F[:, k]
            u = self._lu.solve(rhs)
            if not np.all(np.isfinite(u)):
                raise SolverError(f"non-finite solution at time step {k}")
            U[:, k] = u
        return Trajectory(U, times, grid)


def _source_matrix(source, grid: SpatialGrid, times: np.ndarray) -> np.ndarray | None:
    if source is None:
        return None
    if callable(source):
        pts = grid.points
        F = np.empty((grid.n_nodes, times.size))
        for k, t in enumerate(times):
            F[:, k] = source(pts[:, 0], pts[:, 1], t)
        return F
    F = np.asarray(source, dtype=float)
    if F.shape != (grid.n_nodes, times.size):
        raise ValueError("nodal source array has the wrong shape")
    return F


def solve_forward(model: FractionalModel, grid: SpatialGrid, tgrid: TimeGrid) -> Trajectory:
    """Solve ``model`` on the given space and time grids."""
    solver = ForwardSolver(grid, tgrid, model.alpha, model.kappa_nodes(grid))
    return solver.solve(model.source, model.initial)


def observe(traj: Trajectory, setup: ObservationSetup) -> np.ndarray:
    """Sensor values ordered time-major, then sensor-major."""
    return traj.values[np.ix_(setup.node_indices, setup.time_indices)].T.ravel()


def gaussian_bump_source(theta, x, t):
    """``exp(-t) * exp(-0.5 * (|theta - x| / 0.1)^2)``.

    ``x`` may be a single point or an ``(n, 2)`` array of points.
    """
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    r2 = np.sum((x - theta) ** 2, axis=-1)
    return np.exp(-t) * np.exp(-0.5 * r2 / 0.01)


def bump_source_nodes(theta: Sequence[float], grid: SpatialGrid, times: np.ndarray) -> np.ndarray:
    """Nodal source matrix of :func:`gaussian_bump_source`, separable in time."""
    spatial = gaussian_bump_source(theta, grid.points, 0.0)
    return np.outer(spatial, np.exp(-times))
