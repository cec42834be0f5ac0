"""Experiment configuration with defaults for each inverse problem.

Config files are flat ``key = value`` text (no section header needed). Lists
are comma separated; ``none`` clears an optional value. Unknown keys are an
error so typos do not silently fall back to defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
import typing
from dataclasses import dataclass, field

__all__ = ["ExperimentConfig", "PROBLEMS", "load_config", "config_for"]

PROBLEMS = ("source2d", "source2d-alpha", "diffusivity-kl")

_SECTION = "experiment"


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str = "source2d"

    # discretization: inversion (coarse) and data-generating (fine) solvers
    coarse_n: int = 21
    coarse_steps: int = 100
    fine_n: int = 41
    fine_steps: int = 200
    final_time: float = 1.0
    alpha: float = 0.5
    alpha_clamp: float = 0.01

    # observations
    sensors_per_axis: int = 3
    sensor_times: tuple = (0.25, 0.75, 1.0)
    noise_levels: tuple = (0.01, 0.03, 0.05)
    noise_estimate: str = "truth"  # or "sqrt-m"

    # truth
    truth: tuple | None = (0.2, 0.7)

    # offline stage
    n_train: int = 100
    train_time_stride: int = 2
    pod_energy: float | None = 0.9999
    pod_p: int | None = None
    q: int | None = None
    q_energy: float | None = 0.9999
    kernel: str = "mq"
    n_rv: int = 15
    n_obs: int = 10
    shape_lo: float = 0.1
    shape_hi: float = 30.0
    n_validation: int = 400

    # EKI
    n_ensemble: int = 100
    rho: float = 0.7
    tau: float = 1.0 / 0.7
    max_iters: int = 100
    gamma0: float = 1.0
    direct_eki: bool = False

    # Karhunen-Loeve diffusivity
    kl_sigma2: float = 1.0
    kl_length: float = 0.2
    kl_modes: int = 9
    source_center: tuple = (0.25, 0.75)

    seed: int = 0
    output_dir: str = "results"

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"problem must be one of {PROBLEMS}")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0 < self.alpha_clamp < 0.5:
            raise ValueError("alpha_clamp must lie in (0, 0.5)")
        if any(d <= 0 for d in self.noise_levels):
            raise ValueError("noise levels must be positive")
        if self.noise_estimate not in ("truth", "sqrt-m"):
            raise ValueError("noise_estimate must be 'truth' or 'sqrt-m'")
        if (self.pod_p is None) == (self.pod_energy is None):
            raise ValueError("set exactly one of pod_p and pod_energy")
        if self.n_ensemble < 2 or self.n_train < 2:
            raise ValueError("n_ensemble and n_train must be >= 2")
        if not 0 < self.rho < 1 or self.rho * self.tau < 1 - 1e-12:
            raise ValueError("need 0 < rho < 1 and tau >= 1/rho")
        if (self.fine_n - 1) % (self.coarse_n - 1):
            raise ValueError("fine grid must refine the coarse grid so sensors stay on nodes")
        if self.fine_steps % self.coarse_steps:
            raise ValueError("fine_steps must be a multiple of coarse_steps")
        if not 0 < self.shape_lo < self.shape_hi:
            raise ValueError("need 0 < shape_lo < shape_hi")

    @property
    def param_dim(self) -> int:
        return {"source2d": 2, "source2d-alpha": 3, "diffusivity-kl": self.kl_modes}[self.problem]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                s = "none"
            elif isinstance(v, tuple):
                s = ", ".join(repr(x) for x in v)
            else:
                s = str(v)
            lines.append(f"{f.name} = {s}")
        return "\n".join(lines) + "\n"


_DEFAULTS = {
    "source2d": {},
    "source2d-alpha": dict(
        truth=(0.25, 0.75, 0.8),
        sensors_per_axis=5,
        noise_levels=(0.05,),
        n_train=200,
        pod_energy=None,
        pod_p=10,
        q=10,
    ),
    "diffusivity-kl": dict(
        truth=None,  # drawn from the prior with the run seed
        sensors_per_axis=7,
        n_train=500,
        n_ensemble=200,
    ),
}


def config_for(problem: str, **overrides) -> ExperimentConfig:
    """Defaults for ``problem`` with keyword overrides."""
    if problem not in PROBLEMS:
        raise ValueError(f"problem must be one of {PROBLEMS}")
    kw = {"problem": problem, **_DEFAULTS[problem]}
    kw.update(overrides)
    return ExperimentConfig(**kw)


def _convert(name: str, raw: str, hint):
    raw = raw.strip()
    opt = typing.get_origin(hint) is typing.Union or "None" in str(hint)
    if opt and raw.lower() == "none":
        return None
    base = str(hint)
    if "tuple" in base:
        return tuple(float(x) for x in raw.split(",") if x.strip())
    if "bool" in base:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: not a boolean: {raw!r}")
    if "int" in base:
        return int(raw)
    if "float" in base:
        return float(raw)
    return raw


def load_config(path, problem: str | None = None, **overrides) -> ExperimentConfig:
    """Read a flat key/value config file on top of the problem defaults."""
    with open(path) as fh:
        text = fh.read()
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string(f"[{_SECTION}]\n" + text)
    hints = typing.get_type_hints(ExperimentConfig)
    values = {}
    for key, raw in cp.items(_SECTION):
        if key not in hints:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = _convert(key, raw, hints[key])
    prob = problem or values.pop("problem", "source2d")
    values.pop("problem", None)
    values.update(overrides)
    return config_for(prob, **values)
