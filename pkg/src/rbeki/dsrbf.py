"""Doubly stochastic radial basis function (DSRBF) regression.

Each center ``z_j`` carries its own shape parameter ``eps_j`` drawn from a
chi-squared law whose degrees of freedom are the mean of several
stochastic-LOOCV optimal shapes. The fitted interpolant is

    u(x) = sum_j c_j * phi(eps_j * |x - z_j|)

with ``c`` solving the square (unsymmetric) collocation system at the centers.
All inputs are mapped affinely onto the unit cube before any distance is taken.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as la
from scipy.linalg.lapack import dgecon
from scipy.optimize import minimize_scalar
from scipy.spatial.distance import cdist

__all__ = [
    "KERNELS",
    "DsrbfError",
    "TrainingSet",
    "InputScaling",
    "ShapeDistribution",
    "DsrbfModel",
    "kernel_eval",
    "assemble_matrix",
    "stochastic_loocv_cost",
    "rippa_loocv_cost",
    "select_optimal_shape",
    "select_loocv_shape",
    "build_shape_distribution",
    "fit",
    "fit_constant_shape",
    "train",
    "child_seed",
]

DEFAULT_BOUNDS = (0.1, 30.0)
DEFAULT_N_RV = 15
DEFAULT_N_OBS = 10
MAX_CONDITION = 1e14
PINV_RTOL = 1e-10
MAX_FIT_ATTEMPTS = 4  # first draw + 3 retries


class DsrbfError(RuntimeError):
    pass


def _gaussian(r):
    return np.exp(-(r**2))


def _mq(r):
    return np.sqrt(1.0 + r**2)


def _imq(r):
    return 1.0 / np.sqrt(1.0 + r**2)


KERNELS = {"gaussian": _gaussian, "mq": _mq, "imq": _imq}


def _kernel(kind: str):
    try:
        return KERNELS[kind.lower()]
    except KeyError:
        raise ValueError(f"unknown kernel {kind!r}; expected one of {sorted(KERNELS)}") from None


def kernel_eval(kind: str, r):
    """phi(r) for the Gaussian, multiquadric or inverse multiquadric kernel."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("r must be non-negative")
    out = _kernel(kind)(r)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class TrainingSet:
    """Distinct centers ``Z`` (n_Z x s) with target values (n_Z or n_Z x r)."""

    centers: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        Z = np.asarray(self.centers, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        f = np.asarray(self.values, dtype=float)
        if Z.shape[0] < 2:
            raise ValueError("a training set needs at least 2 centers")
        if f.shape[0] != Z.shape[0]:
            raise ValueError("one value (row) per center is required")
        if not np.all(np.isfinite(f)) or not np.all(np.isfinite(Z)):
            raise ValueError("training data must be finite")
        if np.unique(Z, axis=0).shape[0] != Z.shape[0]:
            raise ValueError("centers must be pairwise distinct")
        object.__setattr__(self, "centers", Z)
        object.__setattr__(self, "values", f)

    @property
    def n(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]


@dataclass(frozen=True)
class InputScaling:
    """Per-dimension affine map ``(x - lo) / width`` onto [0, 1]."""

    lo: np.ndarray
    width: np.ndarray

    @classmethod
    def from_points(cls, Z: np.ndarray) -> "InputScaling":
        lo = Z.min(axis=0)
        width = Z.max(axis=0) - lo
        width[width == 0] = 1.0
        return cls(lo, width)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (x - self.lo) / self.width


@dataclass(frozen=True)
class ShapeDistribution:
    """chi^2 law with ``dof`` degrees of freedom (non-integer allowed)."""

    dof: float
    observations: tuple = ()

    def __post_init__(self):
        if not (self.dof > 0 and np.isfinite(self.dof)):
            raise ValueError("dof must be positive")

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        # chi^2(k) == Gamma(k/2, scale=2); tiny floor keeps every shape positive
        eps = rng.gamma(self.dof / 2.0, 2.0, size=n)
        return np.maximum(eps, np.finfo(float).tiny)


@dataclass(frozen=True)
class DsrbfModel:
    kind: str
    centers: np.ndarray  # scaled to the unit cube
    shapes: np.ndarray
    coefficients: np.ndarray
    scaling: InputScaling
    residual: float = 0.0
    dof: float | None = None

    @property
    def n_centers(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def predict(self, x) -> np.ndarray:
        """Evaluate at one point (shape (s,)) or a batch of points (shape (n, s)).

        Scalar inputs are accepted for one-dimensional models.
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 0 or (x.ndim == 1 and self.dim > 1) or (x.ndim == 1 and x.size == 1)
        X = x.reshape(-1, self.dim) if x.ndim < 2 else x
        if X.shape[1] != self.dim:
            raise ValueError(f"input dimension {X.shape[1]} does not match model dimension {self.dim}")
        B = assemble_matrix(self.centers, self.shapes, self.kind, X=self.scaling(X))
        out = B @ self.coefficients
        return out[0] if single else out

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "centers": self.centers.tolist(),
            "shapes": self.shapes.tolist(),
            "coefficients": self.coefficients.tolist(),
            "scaling_lo": self.scaling.lo.tolist(),
            "scaling_width": self.scaling.width.tolist(),
            "residual": self.residual,
            "dof": self.dof,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DsrbfModel":
        return cls(
            kind=d["kind"],
            centers=np.asarray(d["centers"], dtype=float),
            shapes=np.asarray(d["shapes"], dtype=float),
            coefficients=np.asarray(d["coefficients"], dtype=float),
            scaling=InputScaling(
                np.asarray(d["scaling_lo"], dtype=float), np.asarray(d["scaling_width"], dtype=float)
            ),
            residual=float(d["residual"]),
            dof=None if d.get("dof") is None else float(d["dof"]),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"format": "rbeki-dsrbf", "version": 1, "model": self.to_dict()}, fh)

    @classmethod
    def load(cls, path) -> "DsrbfModel":
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format") != "rbeki-dsrbf":
            raise ValueError(f"{path} is not a DSRBF model file")
        return cls.from_dict(doc["model"])


def assemble_matrix(Z, shapes, kind: str, X=None) -> np.ndarray:
    """Collocation matrix ``A[i, j] = phi(shapes[j] * |x_i - z_j|)``; ``X`` defaults to ``Z``."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    X = Z if X is None else np.atleast_2d(np.asarray(X, dtype=float))
    shapes = np.broadcast_to(np.asarray(shapes, dtype=float), (Z.shape[0],))
    if np.any(shapes <= 0):
        raise ValueError("shape parameters must be positive")
    D = cdist(X, Z)
    return _kernel(kind)(D * shapes[None, :])


def _prepare(ts: TrainingSet):
    scaling = InputScaling.from_points(ts.centers)
    Zs = scaling(ts.centers)
    return scaling, Zs, cdist(Zs, Zs)


def _probe_vectors(n: int, n_rv: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((n, n_rv))


def _stochastic_cost(eps: float, D: np.ndarray, f: np.ndarray, kind: str, W: np.ndarray) -> np.ndarray:
    A = _kernel(kind)(eps * D)
    V = A @ W
    den = np.sum(V * V, axis=1)
    if np.any(den == 0):
        raise DsrbfError(f"zero denominator in beta_1 at index {int(np.nonzero(den == 0)[0][0])}")
    beta1 = np.sum(V * W, axis=1) / den
    beta2 = W @ (np.linalg.pinv(V, rcond=PINV_RTOL) @ f)
    if beta2.ndim > 1:
        beta1 = beta1[:, None]
    if np.any(beta1 == 0):
        raise DsrbfError(f"zero beta_1 component at index {int(np.nonzero(beta1 == 0)[0][0])}")
    return beta2 / beta1


def stochastic_loocv_cost(
    eps: float,
    ts: TrainingSet,
    kind: str,
    n_rv: int = DEFAULT_N_RV,
    rng: np.random.Generator | None = None,
    probes: np.ndarray | None = None,
) -> np.ndarray:
    """Monte Carlo estimate of the LOOCV error vector for a constant shape ``eps``.

    With probe matrix ``W`` (n_Z x n_rv, standard normal) and ``V = A W``::

        beta1 = rowsum(V * W) / rowsum(V * V)
        beta2 = W pinv(V) f
        e     = beta2 / beta1

    ``probes`` overrides ``W`` (used to hold the probes fixed during a search).
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if probes is None:
        if not 0 < n_rv < ts.n:
            raise ValueError(f"need 0 < n_rv < n_Z, got n_rv={n_rv}, n_Z={ts.n}")
        rng = np.random.default_rng() if rng is None else rng
        probes = _probe_vectors(ts.n, n_rv, rng)
    _, _, D = _prepare(ts)
    return _stochastic_cost(eps, D, ts.values, kind, probes)


def rippa_loocv_cost(eps: float, ts: TrainingSet, kind: str) -> np.ndarray:
    """Exact LOOCV error vector ``c_i / (A^-1)_ii`` for a constant shape (Rippa)."""
    _, _, D = _prepare(ts)
    return _rippa(eps, D, ts.values, kind)


def _rippa(eps, D, f, kind):
    A = _kernel(kind)(eps * D)
    Ainv = la.inv(A)
    c = Ainv @ f
    d = np.diag(Ainv)
    return c / (d[:, None] if c.ndim > 1 else d)


def _bounded_min(obj, bounds):
    lo, hi = bounds
    if not 0 < lo < hi:
        raise ValueError("shape bounds must satisfy 0 < lo < hi")

    def checked(e):
        v = obj(e)
        if not np.isfinite(v):
            raise DsrbfError(f"non-finite LOOCV objective at eps={e!r}")
        return v

    res = minimize_scalar(checked, bounds=(lo, hi), method="bounded", options={"xatol": 1e-4 * hi})
    return float(res.x)


def select_optimal_shape(
    ts: TrainingSet,
    kind: str = "mq",
    n_rv: int = DEFAULT_N_RV,
    bounds: tuple[float, float] = DEFAULT_BOUNDS,
    rng: np.random.Generator | None = None,
) -> float:
    """argmin of ``|e(eps)|_2`` over ``bounds`` with the probe vectors fixed."""
    if not 0 < n_rv < ts.n:
        raise ValueError(f"need 0 < n_rv < n_Z, got n_rv={n_rv}, n_Z={ts.n}")
    rng = np.random.default_rng() if rng is None else rng
    _, _, D = _prepare(ts)
    W = _probe_vectors(ts.n, n_rv, rng)
    f = ts.values
    return _bounded_min(lambda e: np.linalg.norm(_stochastic_cost(e, D, f, kind, W)), bounds)


def select_loocv_shape(
    ts: TrainingSet,
    kind: str = "mq",
    bounds: tuple[float, float] = DEFAULT_BOUNDS,
    n_scan: int = 60,
) -> float:
    """Constant shape minimizing the exact (Rippa) LOOCV cost.

    A log-spaced scan locates the global basin, then a bounded search refines it.
    """
    _, _, D = _prepare(ts)
    f = ts.values

    def cost(e):
        with np.errstate(all="ignore"):
            try:
                return float(np.linalg.norm(_rippa(e, D, f, kind)))
            except la.LinAlgError:
                return np.inf

    grid = np.geomspace(bounds[0], bounds[1], n_scan)
    vals = np.array([cost(e) for e in grid])
    i = int(np.nanargmin(np.where(np.isfinite(vals), vals, np.nan)))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, n_scan - 1)]
    res = minimize_scalar(cost, bounds=(lo, hi), method="bounded")
    return float(res.x) if res.fun <= vals[i] else float(grid[i])


def build_shape_distribution(
    ts: TrainingSet,
    kind: str = "mq",
    n_obs: int = DEFAULT_N_OBS,
    n_rv: int = DEFAULT_N_RV,
    bounds: tuple[float, float] = DEFAULT_BOUNDS,
    rng: np.random.Generator | None = None,
) -> ShapeDistribution:
    """Collect ``n_obs`` stochastic-LOOCV optimal shapes; their mean is the chi^2 dof."""
    if n_obs < 1:
        raise ValueError("n_obs must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    obs = [select_optimal_shape(ts, kind, n_rv, bounds, child) for child in rng.spawn(n_obs)]
    return ShapeDistribution(float(np.mean(obs)), tuple(obs))


def _solve_collocation(A: np.ndarray, f: np.ndarray):
    """LU solve; returns (c, relative residual, reciprocal condition estimate)."""
    with warnings.catch_warnings():
        # singularity is detected through the condition estimate below
        warnings.simplefilter("ignore", la.LinAlgWarning)
        lu, piv = la.lu_factor(A, check_finite=False)
    anorm = np.linalg.norm(A, 1)
    rcond, _ = dgecon(lu, anorm, norm="1")
    c = la.lu_solve((lu, piv), f, check_finite=False)
    fn = np.linalg.norm(f)
    res = float(np.linalg.norm(A @ c - f) / fn) if fn > 0 else float(np.linalg.norm(A @ c - f))
    return c, res, rcond


def fit(
    ts: TrainingSet,
    kind: str,
    dist: ShapeDistribution,
    rng: np.random.Generator | None = None,
) -> DsrbfModel:
    """Draw per-center shapes from ``dist`` and solve the collocation system.

    A fresh shape draw is tried (up to three times) when the 1-norm condition
    estimate exceeds ``MAX_CONDITION``.
    """
    rng = np.random.default_rng() if rng is None else rng
    scaling, Zs, D = _prepare(ts)
    phi = _kernel(kind)
    f = ts.values
    for attempt in range(MAX_FIT_ATTEMPTS):
        shapes = dist.sample(ts.n, rng)
        A = phi(D * shapes[None, :])
        with np.errstate(all="ignore"):
            c, res, rcond = _solve_collocation(A, f)
        if rcond > 0 and 1.0 / rcond <= MAX_CONDITION and np.all(np.isfinite(c)):
            return DsrbfModel(kind, Zs, shapes, c, scaling, res, dist.dof)
    raise DsrbfError(
        f"collocation matrix numerically singular after {MAX_FIT_ATTEMPTS} shape draws "
        f"(dof={dist.dof:.4g})"
    )


def fit_constant_shape(ts: TrainingSet, kind: str, eps: float) -> DsrbfModel:
    """Classical RBF interpolant with one shared shape parameter."""
    scaling, Zs, D = _prepare(ts)
    shapes = np.full(ts.n, float(eps))
    A = _kernel(kind)(D * eps)
    c, res, _ = _solve_collocation(A, ts.values)
    return DsrbfModel(kind, Zs, shapes, c, scaling, res, None)


def child_seed(ss: np.random.SeedSequence, *key: int) -> np.random.SeedSequence:
    """Named substream of ``ss``; unlike ``ss.spawn`` it does not mutate ``ss``."""
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + tuple(key))


def train(
    ts: TrainingSet,
    kind: str = "mq",
    n_obs: int = DEFAULT_N_OBS,
    n_rv: int = DEFAULT_N_RV,
    bounds: tuple[float, float] = DEFAULT_BOUNDS,
    seed=None,
) -> DsrbfModel:
    """Shape distribution followed by a fit, on independent RNG substreams."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    shape_ss, fit_ss = child_seed(ss, 0), child_seed(ss, 1)
    dist = build_shape_distribution(
        ts, kind, n_obs, n_rv, bounds, np.random.default_rng(shape_ss)
    )
    return fit(ts, kind, dist, np.random.default_rng(fit_ss))
