"""Regularizing ensemble Kalman inversion with an adaptive gamma and discrepancy stopping.

Each iteration evaluates the forward map on every ensemble member, stops if the
mean prediction fits the data to ``tau`` times the noise level, and otherwise
applies the Kalman-type update

    theta_j <- theta_j + C_tw (C_ww + gamma_n G)^-1 (y_j - w_j)

with ``gamma_n`` the smallest ``gamma0 * 2**i`` satisfying

    gamma |G^{1/2} (C_ww + gamma G)^-1 r| >= rho |G^{-1/2} r|,   r = y_obs - mean(w).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as la

__all__ = [
    "EkiError",
    "PriorSpec",
    "Ensemble",
    "EkiOptions",
    "IterationRecord",
    "InversionResult",
    "sample_prior",
    "perturb_observations",
    "ensemble_stats",
    "select_gamma",
    "eki_update",
    "discrepancy_stop",
    "whitened_norm",
    "run_eki",
]


class EkiError(RuntimeError):
    pass


@dataclass(frozen=True)
class PriorSpec:
    """Independent uniform box prior or standard-normal prior."""

    kind: str  # "uniform" | "normal"
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    dim: int | None = None

    def __post_init__(self):
        if self.kind == "uniform":
            lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
            hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
            if lo.shape != hi.shape or np.any(lo >= hi):
                raise ValueError("uniform prior needs lo < hi in every dimension")
            object.__setattr__(self, "lo", lo)
            object.__setattr__(self, "hi", hi)
            object.__setattr__(self, "dim", lo.size)
        elif self.kind == "normal":
            if self.dim is None or self.dim < 1:
                raise ValueError("normal prior needs dim >= 1")
        else:
            raise ValueError(f"unknown prior kind {self.kind!r}")

    @classmethod
    def uniform(cls, lo, hi) -> "PriorSpec":
        return cls("uniform", lo, hi)

    @classmethod
    def standard_normal(cls, dim: int) -> "PriorSpec":
        return cls("normal", dim=dim)


@dataclass
class Ensemble:
    members: np.ndarray  # (N_e, d)
    iteration: int = 0

    def __post_init__(self):
        self.members = np.atleast_2d(np.asarray(self.members, dtype=float))
        if self.members.shape[0] < 2:
            raise ValueError("an ensemble needs at least 2 members")
        if not np.all(np.isfinite(self.members)):
            raise ValueError("ensemble members must be finite")

    @property
    def size(self) -> int:
        return self.members.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.members.mean(axis=0)


@dataclass(frozen=True)
class EkiOptions:
    rho: float = 0.7
    tau: float = 1.0 / 0.7
    max_iters: int = 100
    gamma0: float = 1.0
    noise_level: float | None = None
    seed: int | None = 0
    stop: bool = True  # False runs max_iters iterations regardless of the discrepancy check
    overrun: float = 1.0  # keep iterating until n >= overrun * (stopping iteration)

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if self.tau * self.rho < 1 - 1e-12:
            raise ValueError("tau must be >= 1/rho")
        if self.overrun < 1:
            raise ValueError("overrun must be >= 1")
        if not self.gamma0 > 0:
            raise ValueError("gamma0 must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")


@dataclass
class IterationRecord:
    n: int
    mean: np.ndarray
    misfit: float  # |G^{-1/2}(y_obs - mean prediction)|
    gamma: float | None
    clamps: int
    wall_time: float
    rel_error: float | None = None
    data_misfit: float | None = None  # E_theta, filled in by metric computation


@dataclass
class InversionResult:
    records: list
    ensemble: Ensemble
    stop_reason: str
    noise_level: float
    tau: float
    stop_iteration: int | None = None

    @property
    def mean(self) -> np.ndarray:
        """Ensemble mean at the stopping iteration (last iteration if the rule never fired)."""
        return self.records[self.final_index].mean

    @property
    def final_index(self) -> int:
        return self.records[-1].n if self.stop_iteration is None else self.stop_iteration

    @property
    def iterations(self) -> int:
        """Analysis steps taken up to the stopping iteration."""
        return self.final_index

    @property
    def online_seconds(self) -> float:
        return self.records[self.final_index].wall_time

    @property
    def misfits(self) -> np.ndarray:
        return np.array([r.misfit for r in self.records])

    @property
    def rel_errors(self) -> np.ndarray:
        return np.array([np.nan if r.rel_error is None else r.rel_error for r in self.records])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            d = self.records[0].mean.size
            w.writerow(["n", "e_theta", "E_theta", "misfit", "gamma", "wall_time", "clamps"]
                       + [f"mean_{i + 1}" for i in range(d)])
            for r in self.records:
                w.writerow([
                    r.n,
                    "" if r.rel_error is None else repr(float(r.rel_error)),
                    "" if r.data_misfit is None else repr(float(r.data_misfit)),
                    repr(float(r.misfit)),
                    "" if r.gamma is None else repr(float(r.gamma)),
                    f"{r.wall_time:.3f}",
                    r.clamps,
                ] + [repr(float(v)) for v in r.mean])


def sample_prior(spec: PriorSpec, n_ensemble: int, rng: np.random.Generator) -> Ensemble:
    if n_ensemble < 2:
        raise ValueError("n_ensemble must be >= 2")
    if spec.kind == "uniform":
        members = rng.uniform(spec.lo, spec.hi, size=(n_ensemble, spec.dim))
    else:
        members = rng.standard_normal((n_ensemble, spec.dim))
    return Ensemble(members, 0)


def _sqrt_factor(Gamma: np.ndarray) -> np.ndarray:
    Gamma = np.atleast_2d(np.asarray(Gamma, dtype=float))
    if not np.allclose(Gamma, Gamma.T):
        raise ValueError("noise covariance must be symmetric")
    try:
        return la.cholesky(Gamma, lower=True)
    except la.LinAlgError:
        raise ValueError("noise covariance must be positive definite") from None


def perturb_observations(y_obs, Gamma, n_ensemble: int, rng: np.random.Generator) -> np.ndarray:
    """Columns ``y_obs + Gamma^{1/2} xi_j`` with ``xi_j`` standard normal, shape (m, N_e)."""
    y_obs = np.asarray(y_obs, dtype=float)
    Lc = _sqrt_factor(Gamma)
    xi = rng.standard_normal((y_obs.size, n_ensemble))
    return y_obs[:, None] + Lc @ xi


def ensemble_stats(members: np.ndarray, outputs: np.ndarray):
    """Means and cross/output covariances with ``1/(N_e - 1)`` normalization.

    Returns ``(theta_bar, w_bar, C_tw (d x m), C_ww (m x m))``.
    """
    members = np.atleast_2d(np.asarray(members, dtype=float))
    outputs = np.atleast_2d(np.asarray(outputs, dtype=float))
    n = members.shape[0]
    if n < 2:
        raise ValueError("covariances need at least 2 members")
    if outputs.shape[0] != n:
        raise ValueError("one output row per ensemble member is required")
    tb = members.mean(axis=0)
    wb = outputs.mean(axis=0)
    dT = members - tb
    dW = outputs - wb
    C_tw = dT.T @ dW / (n - 1)
    C_ww = dW.T @ dW / (n - 1)
    return tb, wb, C_tw, 0.5 * (C_ww + C_ww.T)


def whitened_norm(r, Gamma) -> float:
    """``|Gamma^{-1/2} r|`` (Cholesky whitening)."""
    Lc = _sqrt_factor(Gamma)
    return float(np.linalg.norm(la.solve_triangular(Lc, np.asarray(r, dtype=float), lower=True)))


def _gamma_condition(C_ww, Gamma, Lc, r, gamma, rho, rhs):
    z = la.solve(C_ww + gamma * Gamma, r, assume_a="pos")
    lhs = gamma * np.linalg.norm(Lc.T @ z)
    return lhs >= rhs


def select_gamma(C_ww, Gamma, r, rho: float = 0.7, gamma0: float = 1.0, max_doublings: int = 200) -> float:
    """Smallest ``gamma0 * 2**i`` with ``gamma |G^{1/2}(C + gamma G)^-1 r| >= rho |G^{-1/2} r|``."""
    C_ww = np.atleast_2d(np.asarray(C_ww, dtype=float))
    Gamma = np.atleast_2d(np.asarray(Gamma, dtype=float))
    r = np.atleast_1d(np.asarray(r, dtype=float))
    Lc = _sqrt_factor(Gamma)
    rhs = rho * np.linalg.norm(la.solve_triangular(Lc, r, lower=True))
    if rhs == 0:
        return float(gamma0)
    gamma = float(gamma0)
    for _ in range(max_doublings):
        if _gamma_condition(C_ww, Gamma, Lc, r, gamma, rho, rhs):
            return gamma
        gamma *= 2.0
    raise EkiError("gamma search did not terminate")


def eki_update(
    ensemble: Ensemble, outputs: np.ndarray, perturbed: np.ndarray, gamma: float, Gamma
) -> Ensemble:
    """One analysis step; ``perturbed`` has shape (m, N_e)."""
    Gamma = np.atleast_2d(np.asarray(Gamma, dtype=float))
    outputs = np.atleast_2d(np.asarray(outputs, dtype=float))
    _, _, C_tw, C_ww = ensemble_stats(ensemble.members, outputs)
    try:
        cf = la.cho_factor(C_ww + gamma * Gamma)
    except la.LinAlgError as exc:
        raise EkiError("update system is not positive definite") from exc
    innovations = perturbed - outputs.T  # (m, N_e)
    delta = C_tw @ la.cho_solve(cf, innovations)  # (d, N_e)
    return Ensemble(ensemble.members + delta.T, ensemble.iteration + 1)


def discrepancy_stop(misfit: float, noise_level: float, tau: float) -> bool:
    return misfit <= tau * noise_level


def run_eki(
    forward: Callable[[np.ndarray], np.ndarray],
    prior: PriorSpec | Ensemble,
    y_obs,
    Gamma,
    opts: EkiOptions = EkiOptions(),
    truth=None,
    map_members: Callable[[np.ndarray], np.ndarray] | None = None,
) -> InversionResult:
    """Iterate prediction, discrepancy check and analysis.

    ``forward`` maps an (N_e, d) batch of parameters to (N_e, m) outputs. If it
    has a ``pop_clamps()`` method, the number of clamped evaluations is logged
    per iteration. ``opts.noise_level`` must be set (e.g. from the truth run).
    ``prior`` may be a ready-made :class:`Ensemble` of N_e members; otherwise
    100 members are drawn.
    """
    if opts.noise_level is None:
        raise ValueError("opts.noise_level is required for the stopping rule")
    y_obs = np.asarray(y_obs, dtype=float)
    Gamma = np.atleast_2d(np.asarray(Gamma, dtype=float))
    root = np.random.SeedSequence(opts.seed)
    prior_rng, noise_rng = (np.random.default_rng(s) for s in root.spawn(2))
    if isinstance(prior, Ensemble):
        ens = Ensemble(prior.members.copy(), 0)
    else:
        ens = sample_prior(prior, 100, prior_rng)
    perturbed = perturb_observations(y_obs, Gamma, ens.size, noise_rng)
    truth = None if truth is None else np.asarray(truth, dtype=float)
    pop = getattr(forward, "pop_clamps", None)

    records = []
    stop_reason = "max_iters"
    stop_iteration = None
    n = 0
    t_start = time.perf_counter()
    while True:
        try:
            outputs = np.asarray(forward(ens.members), dtype=float)
        except Exception as exc:
            raise EkiError(f"forward evaluation failed at iteration {n}") from exc
        w_bar = outputs.mean(axis=0)
        r = y_obs - w_bar
        misfit = whitened_norm(r, Gamma)
        mean = ens.mean
        rec = IterationRecord(
            n=n,
            mean=mean,
            misfit=misfit,
            gamma=None,
            clamps=pop() if pop else 0,
            wall_time=time.perf_counter() - t_start,
            rel_error=None if truth is None else float(np.linalg.norm(mean - truth) / np.linalg.norm(truth)),
        )
        records.append(rec)
        if stop_iteration is None and discrepancy_stop(misfit, opts.noise_level, opts.tau):
            stop_iteration = n
        if opts.stop and stop_iteration is not None and n >= opts.overrun * stop_iteration:
            stop_reason = "discrepancy"
            break
        if n >= opts.max_iters:
            break
        _, _, _, C_ww = ensemble_stats(ens.members, outputs)
        gamma = select_gamma(C_ww, Gamma, r, opts.rho, opts.gamma0)
        rec.gamma = gamma
        ens = eki_update(ens, outputs, perturbed, gamma, Gamma)
        n += 1
    return InversionResult(records, ens, stop_reason, float(opts.noise_level), opts.tau, stop_iteration)
