"""Problem definitions and drivers for the source-localization and diffusivity inversions."""

from .config import PROBLEMS, ExperimentConfig, config_for, load_config
from .convergence import ConvergenceStudy, manufactured_error, spatial_study, temporal_study
from .kl import KlField, kl_expansion
from .problems import Problem
from .runner import (
    Inversion,
    OfflineStage,
    SyntheticData,
    build_offline,
    compute_metrics,
    field_correlation,
    forward_convergence,
    generate_synthetic_data,
    invert,
    run_example1,
    run_example1_alpha,
    run_example2,
    validate_surrogate,
    write_manifest,
)
