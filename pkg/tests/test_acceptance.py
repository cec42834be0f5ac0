"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines, or directly
with ``python3 tests/test_acceptance.py``.
"""

import sys
import time

import numpy as np
import pytest

from rbeki import dsrbf, eki, pod
from rbeki import surrogate as sg
from rbeki.experiments import (
    Problem,
    build_offline,
    compute_metrics,
    config_for,
    field_correlation,
    generate_synthetic_data,
    invert,
)
from rbeki.experiments.convergence import spatial_study, temporal_study

# tolerances
TEMPORAL_ORDER_TOL = 0.2
SPATIAL_ORDER_TOL = 0.3
POD_TAIL_RTOL = 1e-8
POD_P_TARGET, POD_P_TOL = 6, 1
RMSE_RATIO_MAX = 2.0
KALMAN_REL_TOL = 0.05
EX1_TOL = {0.01: 0.05, 0.05: 0.08}
EPS_A_MAX = 1e-2
SPEEDUP_MIN = 10.0
FIELD_CORR_MIN = 0.8
SEEDS = range(5)

RESULTS = {}


def report(n, ok, detail):
    line = f"[acceptance {n}] {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    RESULTS[n] = (ok, line)
    assert ok, line


# -- shared offline stages ---------------------------------------------------------

_cache = {}


def example1_offline(seed, **overrides):
    key = (seed, tuple(sorted(overrides.items())))
    if key not in _cache:
        cfg = config_for("source2d", seed=seed, **overrides)
        problem = Problem(cfg)
        _cache[key] = (problem, build_offline(problem, cfg))
    return _cache[key]


# -- criteria -------------------------------------------------------------------------

def test_1_forward_convergence():
    t0 = time.perf_counter()
    parts, ok = [], True
    for a in (0.3, 0.5, 0.8):
        order = temporal_study(a).order
        ok &= abs(order - (2 - a)) <= TEMPORAL_ORDER_TOL
        parts.append(f"temporal a={a}: {order:.3f} (want {2 - a:.1f}+-{TEMPORAL_ORDER_TOL})")
    s = spatial_study(0.5).order
    ok &= abs(s - 2) <= SPATIAL_ORDER_TOL
    parts.append(f"spatial: {s:.3f} (want 2+-{SPATIAL_ORDER_TOL})")
    dt = time.perf_counter() - t0
    ok &= dt < 60
    report(1, ok, "; ".join(parts) + f"; {dt:.1f}s")


def test_2_pod_identity_and_rank():
    t0 = time.perf_counter()
    ps, rel_errs = [], []
    for seed in SEEDS:
        problem = Problem(config_for("source2d", seed=seed))
        params = np.random.default_rng(seed).uniform(size=(100, 2))
        S = pod.build_snapshot_matrix([problem.solve(t) for t in params], problem.train_time_indices())
        B = pod.compute_pod(S, energy_tol=0.9999)
        s = B.singular_values
        tail = np.sqrt(np.sum(s[B.p:] ** 2))
        rel_errs.append(abs(pod.snapshot_reconstruction_error(B, S) - tail) / tail)
        ps.append(B.p)
    dt = time.perf_counter() - t0
    identity_ok = max(rel_errs) <= POD_TAIL_RTOL
    p_med = int(np.median(ps))
    rank_ok = abs(p_med - POD_P_TARGET) <= POD_P_TOL
    report(2, identity_ok and rank_ok and dt < 120,
           f"tail identity max rel err {max(rel_errs):.2e} (<= {POD_TAIL_RTOL:g}); "
           f"p at 99.99% per seed {ps}, median {p_med} (want {POD_P_TARGET}+-{POD_P_TOL}); {dt:.1f}s")


def _rmse(model, x, f):
    return float(np.sqrt(np.mean((model.predict(x[:, None]) - f(x)) ** 2)))


def test_3_dsrbf_oracle_agreement():
    t0 = time.perf_counter()
    f = lambda z: np.sin(2 * np.pi * z)
    z = np.linspace(0, 1, 30)
    ts = dsrbf.TrainingSet(z, f(z))
    x = np.random.default_rng(123).uniform(0, 1, 500)
    eps_exact = dsrbf.select_loocv_shape(ts, "mq")
    oracle = _rmse(dsrbf.fit_constant_shape(ts, "mq", eps_exact), x, f)
    ratios = []
    for seed in range(20):
        eps = dsrbf.select_optimal_shape(ts, "mq", 15, dsrbf.DEFAULT_BOUNDS, np.random.default_rng(seed))
        ratios.append(_rmse(dsrbf.fit_constant_shape(ts, "mq", eps), x, f) / oracle)
    med = float(np.median(ratios))
    dt = time.perf_counter() - t0
    report(3, med <= RMSE_RATIO_MAX and dt < 60,
           f"median RMSE ratio stochastic/exact LOOCV {med:.3g} (<= {RMSE_RATIO_MAX}); "
           f"exact eps {eps_exact:.3g}, oracle RMSE {oracle:.2e}; {dt:.1f}s")


def test_4_eki_linear_gaussian_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    d, m, n = 4, 6, 10_000
    H = rng.normal(size=(m, d))
    G = 0.05 * np.eye(m)
    ens = eki.Ensemble(rng.normal(size=(n, d)) + rng.normal(size=d))
    out = ens.members @ H.T
    y = H @ rng.normal(size=d) + rng.normal(0, np.sqrt(0.05), m)
    P = eki.perturb_observations(y, G, n, rng)
    _, wb, _, Cww = eki.ensemble_stats(ens.members, out)
    gamma = eki.select_gamma(Cww, G, y - wb)
    new = eki.eki_update(ens, out, P, gamma, G)
    Sigma = np.cov(ens.members.T)
    K = Sigma @ H.T @ np.linalg.inv(H @ Sigma @ H.T + gamma * G)
    oracle = ens.mean + K @ (P.mean(axis=1) - H @ ens.mean)
    rel = float(np.linalg.norm(new.mean - oracle) / np.linalg.norm(oracle))
    dt = time.perf_counter() - t0
    report(4, rel <= KALMAN_REL_TOL and dt < 30,
           f"relative mean error vs Kalman oracle {rel:.2e} (<= {KALMAN_REL_TOL}), gamma={gamma:g}; {dt:.1f}s")


def test_5_example1_reproduction():
    t0 = time.perf_counter()
    truth = np.array([0.2, 0.7])
    deltas = (0.01, 0.03, 0.05)
    errs = {d: [] for d in deltas}
    iters = {d: [] for d in deltas}
    for seed in SEEDS:
        problem, off = example1_offline(seed)
        ss = np.random.SeedSequence(seed)
        for i, delta in enumerate(deltas):
            data = generate_synthetic_data(problem, truth, delta, np.random.default_rng(dsrbf.child_seed(ss, 2, 0, i)))
            inv = invert(problem, off.surrogate.forward(), data, seed * 100 + i)
            errs[delta].append(float(np.max(np.abs(inv.mean - truth))))
            iters[delta].append(inv.result.iterations)
    med = {d: float(np.median(errs[d])) for d in deltas}
    med_it = [float(np.median(iters[d])) for d in deltas]
    ok = all(med[d] <= EX1_TOL[d] for d in EX1_TOL) and all(np.diff(med_it) <= 0)
    dt = time.perf_counter() - t0
    report(5, ok and dt < 600,
           f"median |mean - truth|_inf: 1% {med[0.01]:.4f} (<= {EX1_TOL[0.01]}), 3% {med[0.03]:.4f}, "
           f"5% {med[0.05]:.4f} (<= {EX1_TOL[0.05]}); median iterations {med_it} (non-increasing); {dt:.1f}s")


def test_6_surrogate_fidelity():
    t0 = time.perf_counter()
    problem = Problem(config_for("source2d"))
    test = np.random.default_rng(999).uniform(size=(400, 2))
    trajs = {t.tobytes(): problem.solve(t) for t in test}
    solve = lambda th: trajs[np.asarray(th, dtype=float).tobytes()]
    eps_a, tri_ok, eps_p = [], True, []
    for seed in SEEDS:
        _, off = example1_offline(seed, pod_p=6, pod_energy=None)
        rep = sg.validation_errors(off.surrogate, test, (0.25, 0.75, 1.0), solve)
        tri_ok &= bool(np.all(rep.approx <= 2 * rep.projection + rep.coefficient + 1e-12))
        eps_a.append(rep.eps_a)
        eps_p.append(rep.eps_p)
    med = float(np.median(eps_a))
    dt = time.perf_counter() - t0
    report(6, tri_ok and med <= EPS_A_MAX and dt < 180,
           f"triangle bound on all points: {tri_ok}; median eps_a at p=6, N=100: {med:.3e} "
           f"(<= {EPS_A_MAX:g}; eps_p {np.median(eps_p):.3e}); {dt:.1f}s")


def test_7_speedup():
    t0 = time.perf_counter()
    problem, off = example1_offline(0)
    data = generate_synthetic_data(problem, (0.2, 0.7), 0.03, np.random.default_rng(77))
    probe = invert(problem, off.surrogate.forward(), data, 5)
    n = max(probe.result.iterations, 1)
    rb = invert(problem, off.surrogate.forward(), data, 5, stop=False, max_iters=n)
    direct = invert(problem, problem.full_forward(), data, 5, method="direct", stop=False, max_iters=n)
    t_rb = rb.result.records[-1].wall_time
    t_direct = direct.result.records[-1].wall_time
    ratio = t_direct / t_rb
    agree = float(np.max(np.abs(rb.result.records[-1].mean - direct.result.records[-1].mean)))
    dt = time.perf_counter() - t0
    report(7, ratio >= SPEEDUP_MIN and dt < 600,
           f"{n} iterations each: direct {t_direct:.3f}s vs RB {t_rb:.4f}s, speedup {ratio:.0f}x "
           f"(>= {SPEEDUP_MIN:g}x); |RB - direct| {agree:.4f}; {dt:.1f}s")


def test_8_example2_behaviour():
    t0 = time.perf_counter()
    corr, semi, stop_ok, details = [], [], [], []
    for seed in SEEDS:
        cfg = config_for("diffusivity-kl", seed=seed, noise_levels=(0.01,))
        problem = Problem(cfg)
        ss = np.random.SeedSequence(seed)
        truth = np.random.default_rng(dsrbf.child_seed(ss, 4)).standard_normal(9)
        off = build_offline(problem, cfg)
        data = generate_synthetic_data(problem, truth, 0.01, np.random.default_rng(dsrbf.child_seed(ss, 2, 0, 0)))
        inv = invert(problem, off.surrogate.forward(), data, seed + 1000, overrun=2.0)
        e, E = compute_metrics(inv.result, truth, problem.full_forward(), data.y_obs, data.Gamma)
        k = inv.result.final_index
        semi.append(bool(k > 0 and e.min() < e[0] and e.min() < e[-1]))
        stop_ok.append(bool(E[k] <= cfg.tau * inv.noise_level))
        corr.append(field_correlation(problem.kl.log_kappa(inv.mean), problem.kl.log_kappa(truth)))
        details.append(f"seed {seed}: stop {k}, E {E[k]:.2f} vs {cfg.tau * inv.noise_level:.2f}")
    med = float(np.median(corr))
    dt = time.perf_counter() - t0
    ok = all(semi) and all(stop_ok) and med >= FIELD_CORR_MIN and dt < 1200
    report(8, ok,
           f"semiconvergence {semi}; stop rule E(stop) <= tau*noise {stop_ok}; median log-kappa "
           f"correlation {med:.3f} (>= {FIELD_CORR_MIN}); [{'; '.join(details)}]; {dt:.1f}s")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-s", "-q"]))
