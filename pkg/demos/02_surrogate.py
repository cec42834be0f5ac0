"""
Building a reduced surrogate
============================

Snapshots at random source locations give a POD basis. The POD coefficients
are then split into time and parameter modes, and each mode is fitted with
a distributed-shape RBF.
"""

import numpy as np

from rbeki import surrogate as sg
from rbeki.experiments import Problem, build_offline, config_for

cfg = config_for("source2d", n_train=60)
problem = Problem(cfg)
off = build_offline(problem, cfg)

print("POD modes kept:", off.basis.p)
print("time/parameter modes per POD index:", off.surrogate.modes.q)
print("offline timings (s):", {k: round(v, 2) for k, v in off.timings.items()})

# compare against fresh full-order solves
test = np.random.default_rng(1).uniform(size=(40, 2))
rep = sg.validation_errors(off.surrogate, test, (0.25, 0.75, 1.0), problem.solve)
print(f"mean relative errors: approx {rep.eps_a:.3e}, projection {rep.eps_p:.3e}, coefficients {rep.eps_c:.3e}")

# predicted sensor data at one parameter
theta = np.array([[0.2, 0.7]])
print("surrogate:", np.round(off.surrogate.forward()(theta)[0], 4))
print("full model:", np.round(problem.observe(theta[0]), 4))
