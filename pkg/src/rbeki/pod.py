"""Snapshot matrices and proper orthogonal decomposition (POD) bases."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as la

from .tfpde import Trajectory

__all__ = [
    "SnapshotMatrix",
    "PodBasis",
    "build_snapshot_matrix",
    "compute_pod",
    "energy_rank",
    "project",
    "reconstruct",
    "snapshot_reconstruction_error",
    "fix_signs",
]


@dataclass(frozen=True)
class SnapshotMatrix:
    """Snapshot columns with their (time index, parameter index) provenance."""

    data: np.ndarray
    provenance: tuple

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[1] != len(self.provenance):
            raise ValueError("snapshot column count must equal provenance length")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("snapshot matrix contains non-finite entries")

    @property
    def n_columns(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class PodBasis:
    """Leading left singular vectors of a snapshot matrix.

    Attributes
    ----------
    modes : (n_h, p) ndarray
        Orthonormal POD modes.
    singular_values : ndarray
        Full singular value spectrum of the snapshots, non-increasing.
    energy_tol : float or None
        Energy fraction used to pick ``p``; None when ``p`` was fixed.
    """

    modes: np.ndarray
    singular_values: np.ndarray
    energy_tol: float | None = None

    @property
    def p(self) -> int:
        return self.modes.shape[1]

    @property
    def n_h(self) -> int:
        return self.modes.shape[0]

    def truncate(self, p: int) -> "PodBasis":
        """Basis restricted to its first ``p`` modes."""
        if not 0 <= p <= self.p:
            raise ValueError(f"cannot truncate {self.p} modes to {p}")
        return PodBasis(self.modes[:, :p], self.singular_values, None)

    def spectrum_to_csv(self, path) -> None:
        idx = np.arange(1, self.singular_values.size + 1)
        np.savetxt(
            path,
            np.column_stack([idx, self.singular_values]),
            delimiter=",",
            header="index,singular_value",
            comments="",
            fmt=["%d", "%.17g"],
        )


def build_snapshot_matrix(
    trajectories: Sequence[Trajectory], time_subsample: Sequence[int] | None = None
) -> SnapshotMatrix:
    """Stack trajectory columns parameter-major, then time-major.

    Column ``j * n_t + i`` holds trajectory ``j`` at time index ``time_subsample[i]``.
    """
    if len(trajectories) == 0:
        raise ValueError("need at least one trajectory")
    n_h = trajectories[0].values.shape[0]
    n_times = trajectories[0].values.shape[1]
    if time_subsample is None:
        time_subsample = range(n_times)
    tidx = np.asarray(list(time_subsample), dtype=int)
    if tidx.size == 0:
        raise ValueError("time_subsample is empty")
    blocks, prov = [], []
    for j, tr in enumerate(trajectories):
        if tr.values.shape != (n_h, n_times):
            raise ValueError(
                f"trajectory {j} has shape {tr.values.shape}, expected {(n_h, n_times)}"
            )
        blocks.append(tr.values[:, tidx])
        prov.extend((int(i), j) for i in tidx)
    return SnapshotMatrix(np.hstack(blocks), tuple(prov))


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so that each column's largest-magnitude entry is positive."""
    if vectors.size == 0:
        return vectors
    rows = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[rows, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def energy_rank(singular_values: np.ndarray, tol: float) -> int:
    """Smallest ``p`` with captured energy ``sum_{i<=p} s_i^2 / sum s_i^2 > tol``."""
    e = np.asarray(singular_values, dtype=float) ** 2
    total = e.sum()
    if total <= 0:
        raise ValueError("zero spectrum")
    frac = np.cumsum(e) / total
    hits = np.nonzero(frac > tol)[0]
    # round-off can keep frac[-1] a hair below 1
    return int(hits[0]) + 1 if hits.size else int(e.size)


def _left_singular(S: np.ndarray):
    n_h, Q = S.shape
    if n_h >= Q:
        U, s, _ = la.svd(S, full_matrices=False)
        return U, s
    # wide matrix: eigen-decompose the small n_h x n_h Gram matrix
    w, V = la.eigh(S @ S.T)
    order = np.argsort(w)[::-1]
    w = np.clip(w[order], 0.0, None)
    return V[:, order], np.sqrt(w)


def compute_pod(
    S: SnapshotMatrix | np.ndarray, p: int | None = None, energy_tol: float | None = None
) -> PodBasis:
    """POD basis of the snapshots, truncated by a fixed ``p`` or an energy tolerance.

    Exactly one of ``p`` and ``energy_tol`` must be given. A fixed ``p`` is capped
    at the numerical rank.
    """
    data = S.data if isinstance(S, SnapshotMatrix) else np.asarray(S, dtype=float)
    if (p is None) == (energy_tol is None):
        raise ValueError("give exactly one of p and energy_tol")
    if data.shape[1] < 1:
        raise ValueError("need at least one snapshot")
    if not np.any(data):
        raise ValueError("all-zero snapshot matrix has no POD basis")

    U, s = _left_singular(data)
    full = np.zeros(data.shape[1])
    full[: s.size] = s
    rank = int(np.sum(s > s[0] * max(data.shape) * np.finfo(float).eps))
    if energy_tol is not None:
        if not 0.0 < energy_tol < 1.0:
            raise ValueError("energy_tol must lie in (0, 1)")
        p = min(energy_rank(s, energy_tol), rank)
    else:
        if p < 0:
            raise ValueError("p must be non-negative")
        p = min(int(p), rank)
    modes = fix_signs(U[:, :p].copy())
    return PodBasis(modes, full, energy_tol)


def project(basis: PodBasis, u: np.ndarray) -> np.ndarray:
    """POD coefficients ``U_p^T u`` (works column-wise on matrices)."""
    u = np.asarray(u, dtype=float)
    if u.shape[0] != basis.n_h:
        raise ValueError(f"state has {u.shape[0]} entries, basis expects {basis.n_h}")
    return basis.modes.T @ u


def reconstruct(basis: PodBasis, a: np.ndarray) -> np.ndarray:
    """State ``U_p a`` from POD coefficients."""
    a = np.asarray(a, dtype=float)
    if a.shape[0] != basis.p:
        raise ValueError(f"got {a.shape[0]} coefficients, basis has {basis.p} modes")
    return basis.modes @ a


def snapshot_reconstruction_error(basis: PodBasis, S: SnapshotMatrix | np.ndarray) -> float:
    """Frobenius norm of ``S - U_p U_p^T S``."""
    data = S.data if isinstance(S, SnapshotMatrix) else np.asarray(S, dtype=float)
    if data.shape[0] != basis.n_h:
        raise ValueError("snapshot row count does not match basis")
    R = data - basis.modes @ (basis.modes.T @ data)
    return float(np.linalg.norm(R, "fro"))
