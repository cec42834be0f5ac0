"""POD-DSRBF non-intrusive reduced model.

For each POD coefficient ``a_k(t, theta)`` the training values on the tensor
grid ``T_tr x Theta_tr`` form a matrix ``Q_k``. Its SVD splits the coefficient
into separable time and parameter modes,

    a_k(t, theta) ~ sum_l lambda_l^k * Psi_l^k(t) * Phi_l^k(theta),

and each discrete mode is turned into a continuous function with a DSRBF
model. Reduced states are ``U_p a(t, theta)``; reduced observations restrict
``U_p`` to the sensor rows.
"""

from __future__ import annotations

import json
import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from . import dsrbf
from .pod import PodBasis, energy_rank, fix_signs, project
from .tfpde import ObservationSetup, Trajectory

__all__ = [
    "CoefficientTensor",
    "ModeSet",
    "Surrogate",
    "ValidationReport",
    "build_training_set",
    "tensor_decompose",
    "train",
    "validation_errors",
]

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class CoefficientTensor:
    """``Q[k, i, j] = a_k(times[i], params[j])``."""

    Q: np.ndarray
    times: np.ndarray
    params: np.ndarray

    def __post_init__(self):
        params = np.asarray(self.params, dtype=float)
        if params.ndim == 1:
            params = params[:, None]
        object.__setattr__(self, "params", params)
        if self.Q.shape[1:] != (self.times.size, params.shape[0]):
            raise ValueError("coefficient tensor shape does not match grids")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("training times must be sorted and duplicate-free")
        if np.unique(params, axis=0).shape[0] != params.shape[0]:
            raise ValueError("training parameters must be distinct")

    @property
    def p(self) -> int:
        return self.Q.shape[0]

    def matrix(self, k: int) -> np.ndarray:
        return self.Q[k]


def build_training_set(
    solve: Callable[[np.ndarray], Trajectory] | None,
    params: np.ndarray,
    time_indices: Sequence[int],
    basis: PodBasis,
    trajectories: Sequence[Trajectory] | None = None,
) -> CoefficientTensor:
    """Project full-order solutions at ``params`` onto the POD basis.

    Pass ``trajectories`` (aligned with ``params``) to reuse snapshot solves;
    otherwise ``solve(theta)`` is called once per parameter.
    """
    params = np.atleast_2d(np.asarray(params, dtype=float))
    tidx = np.asarray(list(time_indices), dtype=int)
    Q = np.empty((basis.p, tidx.size, params.shape[0]))
    times = None
    for j, theta in enumerate(params):
        if trajectories is not None:
            tr = trajectories[j]
        else:
            try:
                tr = solve(theta)
            except Exception as exc:
                raise RuntimeError(f"full-order solve failed for parameter index {j}") from exc
        if times is None:
            times = tr.times[tidx]
        Q[:, :, j] = project(basis, tr.values[:, tidx])
    return CoefficientTensor(Q, np.asarray(times, dtype=float), params)


def tensor_decompose(Qk: np.ndarray, q: int | None = None, energy_tol: float | None = None):
    """Truncated SVD ``Qk ~ sum_l lam_l psi_l phi_l^T``.

    ``q`` caps the truncation; ``energy_tol`` picks the smallest rank capturing
    that energy fraction. Returns ``(lam, Psi, Phi)`` with unit-norm columns,
    sign-normalized so each ``psi_l`` has a positive largest entry.
    """
    U, s, Vt = np.linalg.svd(Qk, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        warnings.warn("coefficient matrix is identically zero; no modes kept", RuntimeWarning)
        return np.zeros(0), np.zeros((Qk.shape[0], 0)), np.zeros((Qk.shape[1], 0))
    rank = int(np.sum(s > s[0] * max(Qk.shape) * np.finfo(float).eps))
    r = rank
    if energy_tol is not None:
        r = min(r, energy_rank(s, energy_tol))
    if q is not None:
        r = min(r, int(q))
    r = max(r, 1)
    Psi = U[:, :r]
    Phi = Vt[:r].T
    signed = fix_signs(Psi)
    flip = np.sign(np.sum(signed * Psi, axis=0))
    return s[:r].copy(), signed, Phi * flip


@dataclass(frozen=True)
class ModeSet:
    """Per POD index ``k``: singular values and trained time/parameter mode models."""

    lambdas: tuple  # of 1-D arrays
    time_models: tuple  # of tuples of DsrbfModel
    param_models: tuple

    @property
    def q(self) -> tuple:
        return tuple(lam.size for lam in self.lambdas)

    @property
    def n_models(self) -> int:
        return 2 * sum(self.q)


class Surrogate:
    """Reduced forward map built from a POD basis and a trained :class:`ModeSet`."""

    def __init__(
        self,
        basis: PodBasis,
        modes: ModeSet,
        param_lo: np.ndarray,
        param_hi: np.ndarray,
        time_range: tuple[float, float],
        sensor_nodes: np.ndarray | None = None,
        sensor_times: np.ndarray | None = None,
        metadata: dict | None = None,
    ):
        if len(modes.lambdas) != basis.p:
            raise ValueError("one mode family per POD basis vector is required")
        self.basis = basis
        self.modes = modes
        self.param_lo = np.asarray(param_lo, dtype=float)
        self.param_hi = np.asarray(param_hi, dtype=float)
        self.time_range = (float(time_range[0]), float(time_range[1]))
        self.metadata = dict(metadata or {})
        self.sensor_nodes = None if sensor_nodes is None else np.asarray(sensor_nodes, dtype=int)
        self.sensor_times = None if sensor_times is None else np.asarray(sensor_times, dtype=float)
        if self.sensor_times is not None:
            lo, hi = self.time_range
            if np.any(self.sensor_times < lo - 1e-12) or np.any(self.sensor_times > hi + 1e-12):
                raise ValueError("sensor times must lie within the training time range")
            self._sensor_modes = basis.modes[self.sensor_nodes]
            self._sensor_time_factors = self._time_factors(self.sensor_times)
        # every parameter-mode model shares the training centers and scaling
        ref = next((m[0] for m in modes.param_models if m), None)
        self._param_ref = ref

    @property
    def p(self) -> int:
        return self.basis.p

    @property
    def dim(self) -> int:
        return self.param_lo.size

    @property
    def m(self) -> int:
        return self.sensor_nodes.size * self.sensor_times.size

    # -- evaluation -------------------------------------------------------------

    def clamp(self, thetas: np.ndarray):
        """Clamp parameters to the training box; returns (clamped, number of clamped rows)."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        c = np.clip(thetas, self.param_lo, self.param_hi)
        return c, int(np.sum(np.any(c != thetas, axis=1)))

    def _time_factors(self, times) -> list:
        """Per k: (n_times, q_k) matrix ``lam_l * Psi_l(t)``."""
        t = np.clip(np.atleast_1d(np.asarray(times, dtype=float)), *self.time_range)
        out = []
        for lam, models in zip(self.modes.lambdas, self.modes.time_models):
            if lam.size == 0:
                out.append(np.zeros((t.size, 0)))
                continue
            cols = [m.predict(t[:, None]) for m in models]
            out.append(np.column_stack(cols) * lam)
        return out

    def _param_factors(self, thetas: np.ndarray) -> list:
        """Per k: (n_theta, q_k) matrix ``Phi_l(theta)``; ``thetas`` already clamped."""
        out = []
        if self._param_ref is None:
            return [np.zeros((thetas.shape[0], 0)) for _ in self.modes.lambdas]
        ref = self._param_ref
        D = cdist(ref.scaling(thetas), ref.centers)
        phi = dsrbf.KERNELS[ref.kind]
        for models in self.modes.param_models:
            cols = [phi(D * m.shapes[None, :]) @ m.coefficients for m in models]
            out.append(np.column_stack(cols) if cols else np.zeros((thetas.shape[0], 0)))
        return out

    def coefficients(self, times, thetas) -> np.ndarray:
        """Learned coefficients, shape (n_theta, n_times, p)."""
        th, _ = self.clamp(thetas)
        tf = self._time_factors(times)
        pf = self._param_factors(th)
        n_t = tf[0].shape[0]
        a = np.zeros((th.shape[0], n_t, self.p))
        for k in range(self.p):
            if tf[k].shape[1]:
                a[:, :, k] = pf[k] @ tf[k].T
        return a

    def eval_coefficients(self, t: float, theta) -> np.ndarray:
        """``a~(t, theta)`` in R^p (inputs clamped to the training domain)."""
        return self.coefficients([t], theta)[0, 0]

    def reduced_solution(self, t: float, theta) -> np.ndarray:
        return self.basis.modes @ self.eval_coefficients(t, theta)

    def observe_batch(self, thetas, return_clamps: bool = False):
        """Reduced observations for a batch of parameters, shape (n_theta, m).

        Each row is ordered time-major then sensor-major, as :func:`rbeki.tfpde.observe`.
        """
        if self.sensor_times is None:
            raise ValueError("surrogate was built without an observation setup")
        th, n_clamped = self.clamp(thetas)
        pf = self._param_factors(th)
        tf = self._sensor_time_factors
        n = th.shape[0]
        a = np.zeros((n, self.sensor_times.size, self.p))
        for k in range(self.p):
            if tf[k].shape[1]:
                a[:, :, k] = pf[k] @ tf[k].T
        y = (a @ self._sensor_modes.T).reshape(n, -1)
        return (y, n_clamped) if return_clamps else y

    def reduced_observe(self, theta) -> np.ndarray:
        return self.observe_batch(theta)[0]

    def forward(self) -> "SurrogateForward":
        return SurrogateForward(self)

    def scaled(self, factor: float) -> "Surrogate":
        """Copy with every mode singular value multiplied by ``factor``."""
        modes = ModeSet(
            tuple(lam * factor for lam in self.modes.lambdas),
            self.modes.time_models,
            self.modes.param_models,
        )
        return Surrogate(
            self.basis, modes, self.param_lo, self.param_hi, self.time_range,
            self.sensor_nodes, self.sensor_times, self.metadata,
        )

    # -- serialization ----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": "rbeki-surrogate",
            "version": FORMAT_VERSION,
            "basis_modes": self.basis.modes.tolist(),
            "singular_values": self.basis.singular_values.tolist(),
            "energy_tol": self.basis.energy_tol,
            "lambdas": [lam.tolist() for lam in self.modes.lambdas],
            "time_models": [[m.to_dict() for m in ms] for ms in self.modes.time_models],
            "param_models": [[m.to_dict() for m in ms] for ms in self.modes.param_models],
            "param_lo": self.param_lo.tolist(),
            "param_hi": self.param_hi.tolist(),
            "time_range": list(self.time_range),
            "sensor_nodes": None if self.sensor_nodes is None else self.sensor_nodes.tolist(),
            "sensor_times": None if self.sensor_times is None else self.sensor_times.tolist(),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Surrogate":
        if d.get("format") != "rbeki-surrogate":
            raise ValueError("not a surrogate document")
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported surrogate format version {d.get('version')}")
        p = len(d["lambdas"])
        n_h = len(d["basis_modes"])
        modes_arr = np.asarray(d["basis_modes"], dtype=float).reshape(n_h, p)
        basis = PodBasis(modes_arr, np.asarray(d["singular_values"], dtype=float), d["energy_tol"])
        modes = ModeSet(
            tuple(np.asarray(lam, dtype=float) for lam in d["lambdas"]),
            tuple(tuple(dsrbf.DsrbfModel.from_dict(m) for m in ms) for ms in d["time_models"]),
            tuple(tuple(dsrbf.DsrbfModel.from_dict(m) for m in ms) for ms in d["param_models"]),
        )
        return cls(
            basis,
            modes,
            d["param_lo"],
            d["param_hi"],
            tuple(d["time_range"]),
            d["sensor_nodes"],
            d["sensor_times"],
            d["metadata"],
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "Surrogate":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


class SurrogateForward:
    """Batch forward map ``theta -> y_p`` that tallies clamped evaluations."""

    def __init__(self, surrogate: Surrogate):
        self.surrogate = surrogate
        self._clamps = 0

    def __call__(self, thetas) -> np.ndarray:
        y, n = self.surrogate.observe_batch(thetas, return_clamps=True)
        self._clamps += n
        return y

    def pop_clamps(self) -> int:
        n, self._clamps = self._clamps, 0
        return n


def train(
    tensor: CoefficientTensor,
    basis: PodBasis,
    kernel: str = "mq",
    q: int | None = None,
    energy_tol: float | None = 0.9999,
    n_obs: int = dsrbf.DEFAULT_N_OBS,
    n_rv: int = dsrbf.DEFAULT_N_RV,
    bounds: tuple[float, float] = dsrbf.DEFAULT_BOUNDS,
    seed: int | None = 0,
    setup: ObservationSetup | None = None,
    param_box: tuple | None = None,
) -> Surrogate:
    """Offline stage: decompose every ``Q_k`` and fit a DSRBF per time/parameter mode.

    The RNG substream of mode ``(k, l)`` is ``(k, l, 0)`` for the time model and
    ``(k, l, 1)`` for the parameter model, spawned from ``seed``.
    ``param_box`` overrides the clamping box (defaults to the training hull).
    """
    if tensor.p != basis.p:
        raise ValueError(f"tensor has {tensor.p} coefficients, basis has {basis.p} modes")
    root = np.random.SeedSequence(seed)
    t0 = time.perf_counter()
    lambdas, tmodels, pmodels = [], [], []
    for k in range(tensor.p):
        lam, Psi, Phi = tensor_decompose(tensor.matrix(k), q=q, energy_tol=energy_tol)
        tm, pm = [], []
        for l in range(lam.size):
            try:
                tm.append(dsrbf.train(
                    dsrbf.TrainingSet(tensor.times, Psi[:, l]), kernel, n_obs, n_rv, bounds,
                    dsrbf.child_seed(root, k, l, 0),
                ))
                pm.append(dsrbf.train(
                    dsrbf.TrainingSet(tensor.params, Phi[:, l]), kernel, n_obs, n_rv, bounds,
                    dsrbf.child_seed(root, k, l, 1),
                ))
            except dsrbf.DsrbfError as exc:
                raise dsrbf.DsrbfError(f"training failed for mode (k={k}, l={l}): {exc}") from exc
        lambdas.append(lam)
        tmodels.append(tuple(tm))
        pmodels.append(tuple(pm))
        log.debug("coefficient %d: q=%d", k, lam.size)
    modes = ModeSet(tuple(lambdas), tuple(tmodels), tuple(pmodels))
    if param_box is None:
        lo, hi = tensor.params.min(axis=0), tensor.params.max(axis=0)
    else:
        lo, hi = (np.asarray(b, dtype=float) for b in param_box)
    meta = {
        "seed": seed,
        "kernel": kernel,
        "n_obs": n_obs,
        "n_rv": n_rv,
        "bounds": list(bounds),
        "q": q,
        "energy_tol": energy_tol,
        "n_train_params": int(tensor.params.shape[0]),
        "n_train_times": int(tensor.times.size),
        "train_seconds": round(time.perf_counter() - t0, 3),
    }
    return Surrogate(
        basis,
        modes,
        lo,
        hi,
        (tensor.times[0], tensor.times[-1]),
        None if setup is None else setup.node_indices,
        None if setup is None else setup.sensor_times,
        meta,
    )


@dataclass
class ValidationReport:
    """Per-(parameter, time) relative errors and their means."""

    approx: np.ndarray  # ||u - u~|| / ||u||
    projection: np.ndarray  # ||u - U U^T u|| / ||u||
    coefficient: np.ndarray  # ||a - a~|| / ||u||
    skipped: int = 0

    @property
    def eps_a(self) -> float:
        return float(np.mean(self.approx))

    @property
    def eps_p(self) -> float:
        return float(np.mean(self.projection))

    @property
    def eps_c(self) -> float:
        return float(np.mean(self.coefficient))


def validation_errors(
    surrogate,
    test_params: np.ndarray,
    test_times: Sequence[float],
    solve: Callable[[np.ndarray], Trajectory],
    coefficient_fn: Callable | None = None,
) -> ValidationReport:
    """Relative approximation, projection and coefficient-learning errors.

    ``coefficient_fn(times, theta) -> (n_times, p)`` replaces the surrogate's
    learned coefficients (e.g. with exact projections, as an oracle).
    """
    test_params = np.atleast_2d(np.asarray(test_params, dtype=float))
    times = np.asarray(test_times, dtype=float)
    U = surrogate.basis.modes
    ea, ep, ec = [], [], []
    skipped = 0
    for theta in test_params:
        tr = solve(theta)
        states = np.column_stack([tr.at(t) for t in times])
        if coefficient_fn is None:
            at = surrogate.coefficients(times, theta)[0]
        else:
            at = np.asarray(coefficient_fn(times, theta))
        a = U.T @ states
        for i in range(times.size):
            u = states[:, i]
            nu = np.linalg.norm(u)
            if nu == 0:
                skipped += 1
                continue
            ea.append(np.linalg.norm(u - U @ at[i]) / nu)
            ep.append(np.linalg.norm(u - U @ a[:, i]) / nu)
            ec.append(np.linalg.norm(a[:, i] - at[i]) / nu)
    if skipped:
        warnings.warn(f"{skipped} zero-norm test states skipped", RuntimeWarning)
    return ValidationReport(np.array(ea), np.array(ep), np.array(ec), skipped)
