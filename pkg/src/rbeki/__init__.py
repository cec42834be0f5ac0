"""Reduced-basis ensemble Kalman inversion for time-fractional diffusion.

Modules
-------
tfpde
    L1 / finite-difference solver for the Caputo time-fractional diffusion equation.
pod
    Snapshot matrices and POD bases.
dsrbf
    Radial basis interpolation with per-center random shape parameters.
surrogate
    Non-intrusive POD surrogate with DSRBF time and parameter modes.
eki
    Ensemble Kalman inversion with adaptive regularization and discrepancy stopping.
experiments
    Forward problems, synthetic data and end-to-end drivers.
"""

__version__ = "0.1.0"
