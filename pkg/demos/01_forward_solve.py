"""
Forward solve of a time-fractional diffusion problem
=====================================================

A Gaussian source switched on at a point diffuses with memory. We solve it
on a 21x21 grid, read the sensors and check the time-stepping order.
"""

import numpy as np

from rbeki.experiments.convergence import temporal_study
from rbeki.tfpde import (
    ForwardSolver,
    ObservationSetup,
    SpatialGrid,
    TimeGrid,
    bump_source_nodes,
    observe,
    uniform_sensor_grid,
)

grid = SpatialGrid(21, 21)
tgrid = TimeGrid.from_final_time(1.0, 100)
solver = ForwardSolver(grid, tgrid, 0.5)

# source centred at (0.2, 0.7)
traj = solver.solve(bump_source_nodes((0.2, 0.7), grid, tgrid.times))
print("state shape (nodes, times):", traj.values.shape)
print("peak value at t = 1:", traj.values[:, -1].max())

# 3x3 sensors read at three instants
setup = ObservationSetup(grid, tgrid, uniform_sensor_grid(3), (0.25, 0.75, 1.0))
y = observe(traj, setup)
print("observations:", np.round(y, 4))

# the L1 scheme should converge like dt^(2 - alpha)
for alpha in (0.3, 0.5, 0.8):
    study = temporal_study(alpha)
    print(f"alpha={alpha}: observed order {study.order:.2f}, expected {2 - alpha:.1f}")
