import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbeki import eki
from rbeki.eki import Ensemble, EkiOptions, PriorSpec


def test_prior_specs():
    with pytest.raises(ValueError):
        PriorSpec.uniform([0, 1], [1, 1])
    with pytest.raises(ValueError):
        PriorSpec.standard_normal(0)
    assert PriorSpec.uniform([0, 0], [1, 1]).dim == 2


def test_sample_prior_uniform_and_deterministic():
    spec = PriorSpec.uniform([0, 0], [1, 1])
    a = eki.sample_prior(spec, 100, np.random.default_rng(3))
    b = eki.sample_prior(spec, 100, np.random.default_rng(3))
    assert a.members.shape == (100, 2)
    assert np.all((a.members >= 0) & (a.members <= 1))
    np.testing.assert_array_equal(a.members, b.members)
    with pytest.raises(ValueError):
        eki.sample_prior(spec, 1, np.random.default_rng(0))


def test_sample_prior_normal_moments():
    e = eki.sample_prior(PriorSpec.standard_normal(9), 100_000, np.random.default_rng(1))
    assert np.all(np.abs(e.members.mean(axis=0)) < 0.02)
    assert np.all(np.abs(e.members.var(axis=0) - 1) < 0.02)


def test_ensemble_invariants():
    with pytest.raises(ValueError):
        Ensemble(np.zeros((1, 2)))
    with pytest.raises(ValueError):
        Ensemble(np.array([[0.0, np.inf], [1.0, 1.0]]))


def test_perturbed_observations():
    y = np.array([1.0, -2.0, 0.5])
    with pytest.raises(ValueError):
        eki.perturb_observations(y, np.zeros((3, 3)), 5, np.random.default_rng(0))
    with pytest.raises(ValueError):
        eki.perturb_observations(y, np.diag([1.0, -1.0, 1.0]), 5, np.random.default_rng(0))
    delta = 0.03
    P = eki.perturb_observations(y, delta**2 * np.eye(3), 10_000, np.random.default_rng(2))
    assert P.shape == (3, 10_000)
    assert np.all(np.abs((P - y[:, None]).std(axis=1) / delta - 1) < 0.05)
    Q = eki.perturb_observations(y, delta**2 * np.eye(3), 10_000, np.random.default_rng(2))
    np.testing.assert_array_equal(P, Q)


def test_ensemble_stats_hand_example():
    tb, wb, Ctw, Cww = eki.ensemble_stats(np.array([[0.0], [2.0]]), np.array([[0.0], [4.0]]))
    assert tb[0] == 1 and wb[0] == 2 and Ctw[0, 0] == 4 and Cww[0, 0] == 8


def test_ensemble_stats_identical_members():
    _, _, Ctw, Cww = eki.ensemble_stats(np.ones((5, 3)), np.tile([1.0, 2.0], (5, 1)))
    assert not np.any(Ctw) and not np.any(Cww)
    with pytest.raises(ValueError):
        eki.ensemble_stats(np.ones((3, 2)), np.ones((4, 2)))


@given(st.integers(2, 30), st.integers(1, 12), st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_output_covariance_is_psd(n, m, seed):
    rng = np.random.default_rng(seed)
    _, _, Ctw, Cww = eki.ensemble_stats(rng.normal(size=(n, 3)), rng.normal(size=(n, m)))
    assert Ctw.shape == (3, m)
    np.testing.assert_array_equal(Cww, Cww.T)
    w = np.linalg.eigvalsh(Cww)
    assert w.min() >= -1e-10 * max(1.0, w.max())


def test_select_gamma_examples():
    assert eki.select_gamma(np.zeros((2, 2)), np.eye(2), np.array([1.0, 3.0])) == 1.0
    assert eki.select_gamma(np.eye(1), np.eye(1), np.ones(1), rho=0.7, gamma0=1.0) == 4.0
    assert eki.select_gamma(np.eye(2), np.eye(2), np.zeros(2), gamma0=0.5) == 0.5


def _condition(C, G, r, g, rho):
    z = np.linalg.solve(C + g * G, r)
    L = np.linalg.cholesky(G)
    return g * np.linalg.norm(L.T @ z) >= rho * np.linalg.norm(np.linalg.solve(L, r))


@given(st.integers(1, 6), st.integers(0, 2**31 - 1), st.floats(0.1, 0.95), st.floats(0.01, 10))
@settings(max_examples=60, deadline=None)
def test_gamma_is_minimal(m, seed, rho, gamma0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(m, m + 2)) * rng.uniform(0.1, 100)
    C = X @ X.T
    G = np.diag(rng.uniform(0.1, 2, m))
    r = rng.normal(size=m)
    g = eki.select_gamma(C, G, r, rho, gamma0)
    assert _condition(C, G, r, g, rho)
    if g > gamma0:
        assert not _condition(C, G, r, g / 2, rho)
    assert np.log2(g / gamma0) == pytest.approx(round(np.log2(g / gamma0)))


def test_update_with_zero_innovation():
    ens = Ensemble(np.random.default_rng(0).normal(size=(10, 2)))
    out = np.random.default_rng(1).normal(size=(10, 4))
    new = eki.eki_update(ens, out, out.T.copy(), 2.0, np.eye(4))
    np.testing.assert_allclose(new.members, ens.members, atol=1e-14)
    assert new.iteration == ens.iteration + 1


def test_update_matches_kalman_oracle():
    rng = np.random.default_rng(4)
    d, m, n = 3, 5, 10_000
    H = rng.normal(size=(m, d))
    G = 0.1 * np.eye(m)
    ens = Ensemble(rng.normal(size=(n, d)) + [1.0, -1.0, 0.5])
    out = ens.members @ H.T
    y = rng.normal(size=m)
    P = eki.perturb_observations(y, G, n, rng)
    gamma = 2.0
    new = eki.eki_update(ens, out, P, gamma, G)
    Sigma = np.cov(ens.members.T)
    K = Sigma @ H.T @ np.linalg.inv(H @ Sigma @ H.T + gamma * G)
    oracle = ens.mean + K @ (P.mean(axis=1) - H @ ens.mean)
    assert np.linalg.norm(new.mean - oracle) / np.linalg.norm(oracle) < 0.05


@given(st.floats(0.01, 100), st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_update_invariant_to_observation_scaling(c, seed):
    rng = np.random.default_rng(seed)
    ens = Ensemble(rng.normal(size=(8, 2)))
    out = rng.normal(size=(8, 3))
    P = rng.normal(size=(3, 8))
    G = np.diag(rng.uniform(0.5, 2, 3))
    a = eki.eki_update(ens, out, P, 1.5, G)
    b = eki.eki_update(ens, c * out, c * P, 1.5, c**2 * G)
    np.testing.assert_allclose(a.members, b.members, rtol=1e-8, atol=1e-10)


def test_updates_stay_in_initial_affine_span():
    rng = np.random.default_rng(0)
    d, n = 5, 3  # fewer members than dimensions: the span is a proper subspace
    H = rng.normal(size=(4, d))
    ens = Ensemble(rng.normal(size=(n, d)))
    base = ens.members - ens.mean
    P = rng.normal(size=(4, n))
    for _ in range(4):
        ens = eki.eki_update(ens, ens.members @ H.T, P, 1.0, np.eye(4))
    stacked = np.vstack([base, ens.members - ens.mean])
    assert np.linalg.matrix_rank(stacked, tol=1e-8) == np.linalg.matrix_rank(base, tol=1e-8)


def test_discrepancy_stop():
    assert eki.discrepancy_stop(0.0, 1.0, 1 / 0.7)
    assert eki.discrepancy_stop(1.42, 1.0, 1 / 0.7)
    assert not eki.discrepancy_stop(1.43, 1.0, 1 / 0.7)
    assert eki.discrepancy_stop(1 / 0.7, 1.0, 1 / 0.7)
    assert eki.discrepancy_stop(0.0, 0.0, 2.0) and not eki.discrepancy_stop(1e-12, 0.0, 2.0)


def test_options_validation():
    with pytest.raises(ValueError):
        EkiOptions(rho=1.0)
    with pytest.raises(ValueError):
        EkiOptions(rho=0.7, tau=1.2)
    with pytest.raises(ValueError):
        EkiOptions(gamma0=0.0)


def _identity_problem(seed=0, delta=0.05):
    truth = np.array([0.3, 0.8])
    rng = np.random.default_rng(seed)
    xi = rng.normal(0, delta, 2)
    G = delta**2 * np.eye(2)
    return truth, truth + xi, G, float(np.linalg.norm(xi) / delta)


def test_run_eki_identity_map_improves():
    truth, y, G, nl = _identity_problem()
    res = eki.run_eki(lambda th: th, PriorSpec.uniform([0, 0], [1, 1]), y, G,
                      EkiOptions(noise_level=nl, seed=1), truth=truth)
    assert res.stop_reason == "discrepancy"
    assert res.records[res.iterations].rel_error < res.records[0].rel_error
    assert [r.n for r in res.records] == list(range(len(res.records)))
    assert res.records[-1].misfit <= res.tau * nl


def test_run_eki_zero_iterations_returns_prior_mean():
    truth, y, G, nl = _identity_problem()
    prior = eki.sample_prior(PriorSpec.uniform([0, 0], [1, 1]), 50, np.random.default_rng(0))
    res = eki.run_eki(lambda th: th + 10, prior, y, G, EkiOptions(noise_level=nl, max_iters=0))
    assert res.stop_reason == "max_iters"
    np.testing.assert_allclose(res.mean, prior.mean)


def test_run_eki_deterministic_and_requires_noise_level(tmp_path):
    truth, y, G, nl = _identity_problem()
    spec = PriorSpec.uniform([0, 0], [1, 1])
    a = eki.run_eki(lambda th: th**2, spec, y, G, EkiOptions(noise_level=nl, seed=3))
    b = eki.run_eki(lambda th: th**2, spec, y, G, EkiOptions(noise_level=nl, seed=3))
    assert a.mean.tobytes() == b.mean.tobytes()
    with pytest.raises(ValueError):
        eki.run_eki(lambda th: th, spec, y, G, EkiOptions())
    a.to_csv(tmp_path / "d.csv")
    header = (tmp_path / "d.csv").read_text().splitlines()[0]
    assert header.startswith("n,e_theta,E_theta,misfit,gamma,wall_time,clamps")


def test_run_eki_forward_failure_names_iteration():
    truth, y, G, nl = _identity_problem()
    calls = []

    def fwd(th):
        calls.append(1)
        if len(calls) == 2:
            raise ArithmeticError("bad")
        return th * 5

    with pytest.raises(eki.EkiError, match="iteration 1"):
        eki.run_eki(fwd, PriorSpec.uniform([0, 0], [1, 1]), y, G, EkiOptions(noise_level=0.0))


def test_overrun_and_forced_iterations():
    truth, y, G, nl = _identity_problem()
    spec = PriorSpec.uniform([0, 0], [1, 1])
    base = eki.run_eki(lambda th: th, spec, y, G, EkiOptions(noise_level=nl, seed=2))
    k = base.stop_iteration
    over = eki.run_eki(lambda th: th, spec, y, G, EkiOptions(noise_level=nl, seed=2, overrun=2.0))
    assert over.stop_iteration == k and over.records[-1].n == 2 * k
    np.testing.assert_array_equal(over.mean, base.mean)
    forced = eki.run_eki(lambda th: th, spec, y, G, EkiOptions(noise_level=nl, seed=2, stop=False, max_iters=7))
    assert forced.records[-1].n == 7 and forced.stop_reason == "max_iters"
