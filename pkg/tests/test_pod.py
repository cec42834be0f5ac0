import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rbeki import pod
from rbeki.tfpde import SpatialGrid, TimeGrid, Trajectory


def _traj(values):
    g = SpatialGrid(3, 3)
    return Trajectory(values, np.linspace(0, 1, values.shape[1]), g)


def test_snapshot_matrix_layout_and_provenance():
    rng = np.random.default_rng(0)
    trajs = [_traj(rng.normal(size=(9, 5))) for _ in range(3)]
    S = pod.build_snapshot_matrix(trajs, [1, 3])
    assert S.data.shape == (9, 6)
    assert S.provenance[:3] == ((1, 0), (3, 0), (1, 1))
    np.testing.assert_array_equal(S.data[:, 3], trajs[1].values[:, 3])


def test_snapshot_matrix_errors():
    with pytest.raises(ValueError):
        pod.build_snapshot_matrix([])
    a = _traj(np.zeros((9, 5)))
    b = Trajectory(np.zeros((9, 4)), np.linspace(0, 1, 4), SpatialGrid(3, 3))
    with pytest.raises(ValueError, match="trajectory 1"):
        pod.build_snapshot_matrix([a, b])


def test_energy_rank():
    s = np.array([3.0, 2.0, 1.0])  # energies 9, 4, 1 of 14
    assert pod.energy_rank(s, 0.5) == 1
    assert pod.energy_rank(s, 9 / 14) == 2  # strict inequality
    assert pod.energy_rank(s, 0.99) == 3


def test_rank_one_and_argument_checks():
    u = np.arange(1.0, 7.0)
    S = np.outer(u, [1.0, -2.0, 0.5])
    B = pod.compute_pod(S, energy_tol=0.9999)
    assert B.p == 1
    np.testing.assert_allclose(np.abs(B.modes[:, 0]), u / np.linalg.norm(u))
    assert B.modes[np.argmax(np.abs(B.modes[:, 0])), 0] > 0
    assert pod.compute_pod(S, p=4).p == 1  # capped at numerical rank
    with pytest.raises(ValueError):
        pod.compute_pod(S)
    with pytest.raises(ValueError):
        pod.compute_pod(S, p=1, energy_tol=0.9)
    with pytest.raises(ValueError):
        pod.compute_pod(np.zeros((4, 3)), p=1)


@given(arrays(np.float64, (8, 5), elements=st.floats(-10, 10)), st.integers(1, 5))
@settings(max_examples=50, deadline=None)
def test_reconstruction_error_is_svd_tail(S, p):
    if np.linalg.matrix_rank(S) < p:
        return
    B = pod.compute_pod(S, p=p)
    s = np.linalg.svd(S, compute_uv=False)
    tail = np.sqrt(np.sum(s[p:] ** 2))
    assert pod.snapshot_reconstruction_error(B, S) == pytest.approx(tail, rel=1e-8, abs=1e-9 * s[0])
    np.testing.assert_allclose(B.modes.T @ B.modes, np.eye(B.p), atol=1e-10)


@given(arrays(np.float64, (4, 12), elements=st.floats(-5, 5)))
@settings(max_examples=40, deadline=None)
def test_wide_matrix_uses_gram_route_consistently(S):
    # n_h < Q goes through the Gram eigenproblem; compare against a direct SVD
    if np.linalg.matrix_rank(S) < 4:
        return
    s = np.linalg.svd(S, compute_uv=False)
    if np.min(np.diff(-s)) < 1e-6 * s[0]:
        return
    B = pod.compute_pod(S, p=4)
    np.testing.assert_allclose(B.singular_values[:4], s, rtol=1e-7)
    U = pod.fix_signs(np.linalg.svd(S, full_matrices=False)[0])
    np.testing.assert_allclose(B.modes, U, atol=1e-6)


def test_project_reconstruct_roundtrip():
    rng = np.random.default_rng(2)
    S = rng.normal(size=(10, 30))
    B = pod.compute_pod(S, p=4)
    a = pod.project(B, S[:, 0])
    np.testing.assert_allclose(pod.project(B, pod.reconstruct(B, a)), a, atol=1e-12)
    with pytest.raises(ValueError):
        pod.project(B, np.ones(9))
    with pytest.raises(ValueError):
        pod.reconstruct(B, np.ones(3))


def test_truncate_and_spectrum_csv(tmp_path):
    S = np.random.default_rng(1).normal(size=(6, 4))
    B = pod.compute_pod(S, p=3)
    assert B.truncate(2).p == 2
    with pytest.raises(ValueError):
        B.truncate(4)
    B.spectrum_to_csv(tmp_path / "s.csv")
    data = np.loadtxt(tmp_path / "s.csv", delimiter=",", skiprows=1)
    np.testing.assert_allclose(data[:, 1], np.linalg.svd(S, compute_uv=False))


def test_example_snapshots_energy(small_offline):
    S = small_offline["S"]
    B = small_offline["basis"]
    s = np.linalg.svd(S.data, compute_uv=False)
    tail = np.sqrt(np.sum(s[B.p:] ** 2))
    assert pod.snapshot_reconstruction_error(B, S) == pytest.approx(tail, rel=1e-8)
    # spectrum decays fast: six modes carry more than 99.9% of the energy
    assert np.sum(s[:6] ** 2) / np.sum(s**2) > 0.999
