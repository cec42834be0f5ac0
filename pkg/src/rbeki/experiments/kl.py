"""Truncated Karhunen-Loeve expansion of a squared-exponential Gaussian field."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
from scipy.spatial.distance import cdist

from ..tfpde import SpatialGrid

__all__ = ["KlField", "kl_expansion", "squared_exponential"]


def squared_exponential(X1, X2, sigma2: float, length: float) -> np.ndarray:
    """``sigma2 * exp(-|x1 - x2|^2 / (2 l^2))`` for all pairs."""
    d2 = cdist(np.atleast_2d(X1), np.atleast_2d(X2), "sqeuclidean")
    return sigma2 * np.exp(-d2 / (2.0 * length**2))


@dataclass(frozen=True)
class KlField:
    """Nystrom KL basis on a grid.

    ``log kappa(x; theta) = sum_i theta_i sqrt(lambda_i) phi_i(x)``. The
    eigenfunctions are orthonormal in the inner product ``h_x h_y sum_n u v``.
    """

    sigma2: float
    length: float
    grid: SpatialGrid
    eigenvalues: np.ndarray  # (d,)
    eigenfunctions: np.ndarray  # (n_h, d)
    total_variance: float  # trace of the discrete covariance operator

    @property
    def d(self) -> int:
        return self.eigenvalues.size

    @property
    def energy_fraction(self) -> float:
        return float(self.eigenvalues.sum() / self.total_variance)

    def log_kappa(self, theta, points: np.ndarray | None = None) -> np.ndarray:
        """Log-diffusivity at the KL grid nodes, or at ``points`` via Nystrom extension."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != self.d:
            raise ValueError(f"expected {self.d} KL coefficients, got {theta.shape[-1]}")
        phi = self.eigenfunctions if points is None else self.extend(points)
        return phi @ (np.sqrt(self.eigenvalues) * theta)

    def kappa(self, theta, points: np.ndarray | None = None) -> np.ndarray:
        return np.exp(self.log_kappa(theta, points))

    def extend(self, points: np.ndarray) -> np.ndarray:
        """Eigenfunctions evaluated off-grid: ``phi_i(x) = (w / lambda_i) sum_n K(x, x_n) phi_i(x_n)``."""
        w = self.grid.hx * self.grid.hy
        K = squared_exponential(points, self.grid.points, self.sigma2, self.length)
        return (K @ self.eigenfunctions) * (w / self.eigenvalues)


def kl_expansion(sigma2: float, length: float, d: int, grid: SpatialGrid) -> KlField:
    """Top ``d`` eigenpairs of the covariance operator by the Nystrom method."""
    if sigma2 <= 0 or length <= 0:
        raise ValueError("sigma2 and length must be positive")
    n = grid.n_nodes
    if not 1 <= d <= n:
        raise ValueError(f"d must lie in [1, {n}]")
    w = grid.hx * grid.hy
    K = squared_exponential(grid.points, grid.points, sigma2, length)
    lam, V = la.eigh(w * K)
    lam, V = lam[::-1], V[:, ::-1]
    rank = int(np.sum(lam > lam[0] * 1e-12))
    if d > rank:
        raise ValueError(f"requested {d} modes but the kernel matrix has numerical rank {rank}")
    # orthonormal in the weighted inner product
    phi = V[:, :d] / np.sqrt(w)
    signs = np.sign(phi[np.argmax(np.abs(phi), axis=0), np.arange(d)])
    return KlField(
        float(sigma2), float(length), grid, lam[:d].copy(), phi * signs, float(np.trace(w * K))
    )
