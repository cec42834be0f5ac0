import numpy as np
import pytest

from rbeki import pod
from rbeki import surrogate as sg
from rbeki.tfpde import ForwardSolver, ObservationSetup, SpatialGrid, TimeGrid, bump_source_nodes, uniform_sensor_grid

SENSOR_TIMES = (0.25, 0.75, 1.0)


class SourceModel:
    """Coarse Example-1 forward model shared across tests."""

    def __init__(self, n=21, steps=100):
        self.grid = SpatialGrid(n, n)
        self.tgrid = TimeGrid.from_final_time(1.0, steps)
        self.solver = ForwardSolver(self.grid, self.tgrid, 0.5)
        self.setup = ObservationSetup(self.grid, self.tgrid, uniform_sensor_grid(3), SENSOR_TIMES)

    def solve(self, theta):
        return self.solver.solve(bump_source_nodes(theta, self.grid, self.tgrid.times))


@pytest.fixture(scope="session")
def source_model():
    return SourceModel()


@pytest.fixture(scope="session")
def small_offline(source_model):
    """40 training parameters x 25 times, p = 6; cheap enough for unit tests."""
    rng = np.random.default_rng(3)
    params = rng.uniform(size=(40, 2))
    trajs = [source_model.solve(t) for t in params]
    tidx = np.arange(4, 101, 4)
    S = pod.build_snapshot_matrix(trajs, tidx)
    basis = pod.compute_pod(S, p=6)
    tensor = sg.build_training_set(None, params, tidx, basis, trajs)
    sur = sg.train(tensor, basis, kernel="mq", seed=5, setup=source_model.setup, param_box=([0, 0], [1, 1]),
                   n_obs=4)
    return dict(params=params, trajs=trajs, tidx=tidx, S=S, basis=basis, tensor=tensor, surrogate=sur)
