"""Acceptance criteria, one test per criterion.

Each test prints a PASS/FAIL line through ``acceptance_report`` (also
repeated in the pytest terminal summary) and then asserts.
"""

import time
from pathlib import Path

import numpy as np
import pytest

import oracles
from acceptance_report import report
from mfng import config as cfgmod
from mfng.ais import AisConfig, ais_log_z, base_rate_model
from mfng.evaluation import (
    exact_fim,
    exact_log_z,
    exact_loglik,
    exact_natural_gradient,
    exact_negative_phase,
    exact_positive_phase,
    probability_table,
)
from mfng.experiment import read_metrics, run_experiment
from mfng.inference import ChainPool, gibbs_sweep, sample_negative
from mfng.metric import MetricOperator, SampleMatrix, apply_metric, build_sample_matrix, dense_metric
from mfng.model import DbmModel
from mfng.optim import ALGORITHMS, TrainConfig, nll_gradient, update_direction
from mfng.solver import SolverConfig, cg, minres

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "bars_stripes.yaml"
SEEDS = range(5)


def uniform_dbm(rng, sizes):
    """Random centered DBM with every weight and bias in [-1, 1]."""
    return oracles.random_dbm(rng, sizes, w_scale=1.0, b_scale=1.0)


def rel(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b))


def test_criterion_01_fim_forms_agree():
    rng = np.random.default_rng(101)
    shapes = [[4, 4, 4], [5, 4, 3], [6, 4, 2], [3, 3, 3, 3], [6, 6], [8, 4], [4, 3, 2], [2, 2, 2]]
    t0 = time.perf_counter()
    worst_outer = worst_hess = 0.0
    for i in range(20):
        model = uniform_dbm(rng, shapes[i % len(shapes)])
        cov = exact_fim(model, "covariance")
        worst_outer = max(worst_outer, np.max(np.abs(cov - exact_fim(model, "score_outer"))))
        worst_hess = max(worst_hess, np.max(np.abs(cov - exact_fim(model, "hessian_logZ"))))
    elapsed = time.perf_counter() - t0
    ok = worst_outer <= 1e-10 and worst_hess <= 1e-5 and elapsed < 60
    report(1, ok, f"20 models, max|cov-score_outer|={worst_outer:.1e}, "
                  f"max|cov-hessian|={worst_hess:.1e}, {elapsed:.1f}s")
    assert ok


def test_criterion_02_matrix_free_operator():
    rng = np.random.default_rng(102)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        S = rng.normal(size=(32, 200))
        alpha = rng.uniform(0.01, 1.0)
        C = S - S.mean(axis=0)
        dense = C.T @ C / 32 + alpha * np.eye(200)
        op = MetricOperator(SampleMatrix.from_rows(S), alpha)
        y = rng.normal(size=200)
        worst = max(worst, rel(apply_metric(op, y), dense @ y))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed < 10
    report(2, ok, f"50 instances M=32 N=200, max rel err={worst:.1e}, {elapsed:.2f}s")
    assert ok


def test_criterion_03_weighted_pool_equals_exact_fim():
    rng = np.random.default_rng(103)
    shapes = [[4, 3, 2], [5, 3], [3, 3, 3], [4, 4, 2], [2, 3, 2, 3]]
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(10):
        model = uniform_dbm(rng, shapes[i % len(shapes)])
        op = MetricOperator(build_sample_matrix(model, exact_negative_phase(model)), alpha=0.0)
        worst = max(worst, np.max(np.abs(dense_metric(op) - exact_fim(model, "covariance"))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed < 60
    report(3, ok, f"10 models, max entry diff={worst:.1e}, {elapsed:.2f}s")
    assert ok


def test_criterion_04_solver_correctness():
    rng = np.random.default_rng(104)
    t0 = time.perf_counter()
    spd_err = 0.0
    for _ in range(20):
        Q, _ = np.linalg.qr(rng.normal(size=(20, 20)))
        A = Q @ np.diag(rng.uniform(0.1, 10.0, 20)) @ Q.T
        b = rng.normal(size=20)
        x = minres(A, b, config=SolverConfig(tolerance=1e-5)).solution
        spd_err = max(spd_err, rel(x, np.linalg.solve(A, b)))

    rank1_err = 0.0
    for _ in range(20):
        u = rng.normal(size=12)
        A = np.outer(u, u)
        b = A @ rng.normal(size=12)
        x = minres(A, b, config=SolverConfig(tolerance=1e-12)).solution
        rank1_err = max(rank1_err, np.max(np.abs(x - np.linalg.pinv(A) @ b)))

    # finite termination holds up to rounding, so the gate uses spectra in [1, 10];
    # the Wishart-like family (condition 25-65) is reported but not gated
    cg_iters = loose_iters = 0
    for _ in range(20):
        Q, _ = np.linalg.qr(rng.normal(size=(8, 8)))
        A = Q @ np.diag(rng.uniform(1.0, 10.0, 8)) @ Q.T
        res = cg(A, rng.normal(size=8), config=SolverConfig(tolerance=1e-12))
        assert res.termination == "converged"
        cg_iters = max(cg_iters, res.iterations)
        B = rng.normal(size=(8, 8))
        loose = cg(B @ B.T + 0.5 * np.eye(8), rng.normal(size=8), config=SolverConfig(tolerance=1e-12))
        loose_iters = max(loose_iters, loose.iterations)
    elapsed = time.perf_counter() - t0
    ok = spd_err <= 1e-4 and rank1_err <= 1e-6 and cg_iters <= 8 and elapsed < 10
    report(4, ok, f"SPD rel err={spd_err:.1e}, rank-1 min-norm err={rank1_err:.1e}, "
                  f"CG max iters={cg_iters}/8 (BB^T+0.5I: {loose_iters}), {elapsed:.2f}s")
    assert ok


def test_criterion_05_enumerated_mfng_step():
    rng = np.random.default_rng(105)
    model = oracles.random_dbm(rng, [4, 3, 2], w_scale=0.5, b_scale=0.5)
    data = rng.integers(0, 2, (20, 4)).astype(float)
    t0 = time.perf_counter()
    pos, neg = exact_positive_phase(model, data), exact_negative_phase(model)
    config = TrainConfig(algorithm="mfng", damping=0.1)
    delta, rep = update_direction(model, pos.states, neg.states, config, pos.weights, neg.weights)
    reference = exact_natural_gradient(model, data, 0.1)
    err = rel(delta, reference)
    elapsed = time.perf_counter() - t0
    ok = err <= 1e-4 and elapsed < 120
    report(5, ok, f"4-3-2 rel err={err:.1e} ({rep.solver.iterations} MINRES iters, "
                  f"tol {config.solver.tolerance:g}), {elapsed:.2f}s")
    assert ok


def test_criterion_06_gradient_matches_finite_differences():
    rng = np.random.default_rng(106)
    shapes = [[3, 2], [2, 2, 2], [3, 2, 1], [4, 2], [2, 3, 2]]
    t0 = time.perf_counter()
    worst = 0.0
    h = 1e-5
    for i in range(10):
        model = uniform_dbm(rng, shapes[i % len(shapes)])
        data = rng.integers(0, 2, (8, model.layer_sizes[0])).astype(float)
        pos, neg = exact_positive_phase(model, data), exact_negative_phase(model)
        g = nll_gradient(model, pos.states, neg.states, pos.weights, neg.weights)
        theta = model.params.values
        fd = np.empty_like(theta)
        for k in range(theta.size):
            e = np.zeros_like(theta)
            e[k] = h
            fd[k] = -(exact_loglik(model.with_values(theta + e), data)
                      - exact_loglik(model.with_values(theta - e), data)) / (2 * h)
        worst = max(worst, np.max(np.abs(g - fd)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 60
    report(6, ok, f"10 models, max|g - FD|={worst:.1e}, {elapsed:.2f}s")
    assert ok


def test_criterion_07_gibbs_stationarity():
    model = oracles.random_dbm(np.random.default_rng(107), [4, 3, 2], w_scale=0.8, b_scale=0.8)
    n_chains, sweeps = 100, 10_000
    t0 = time.perf_counter()
    pool = ChainPool.initialize(model, n_chains, seed=7)
    sample_negative(model, pool, 100)                       # burn-in
    code = 1 << np.arange(model.n_units)
    counts = np.zeros(2 ** model.n_units)
    for _ in range(sweeps):
        gibbs_sweep(model, pool)
        counts += np.bincount((pool.flat() @ code).astype(int), minlength=counts.size)
    tv = oracles.tv_distance(counts / counts.sum(), probability_table(model))
    elapsed = time.perf_counter() - t0
    ok = tv < 0.02 and elapsed < 120
    report(7, ok, f"4-3-2 DBM, {n_chains}x{sweeps} sweeps, TV={tv:.4f}, {elapsed:.1f}s")
    assert ok


def test_criterion_08_ais_accuracy():
    rng = np.random.default_rng(108)
    model = oracles.random_dbm(rng, [8, 6, 4], w_scale=0.5, b_scale=0.5)
    data = rng.integers(0, 2, (50, 8)).astype(float)
    t0 = time.perf_counter()
    exact = exact_log_z(model)
    estimates = [ais_log_z(model, AisConfig(100, 1000, seed=s), data=data).log_z for s in range(20)]
    error = float(np.mean(estimates) - exact)
    base = base_rate_model([8, 6, 4], data)
    base_error = ais_log_z(base, AisConfig(100, 1000, seed=0), data=data).log_z - exact_log_z(base)
    elapsed = time.perf_counter() - t0
    ok = abs(error) <= 0.1 and abs(base_error) <= 1e-10 and elapsed < 300
    report(8, ok, f"8-6-4 mean AIS error={error:+.4f} nat (sd {np.std(estimates):.3f}), "
                  f"base-rate error={base_error:.1e}, {elapsed:.1f}s")
    assert ok


def test_criterion_09_reparameterization_invariance():
    rng = np.random.default_rng(109)
    worst = 0.0
    for sizes in ([3, 2, 2], [4, 3], [2, 2, 2, 2]):
        model = oracles.random_dbm(rng, sizes, 0.8, 0.8)
        data = rng.integers(0, 2, (6, sizes[0])).astype(float)
        delta = exact_natural_gradient(model, data, 0.0)
        for _ in range(3):
            A = np.eye(model.n_params) + 0.3 * rng.normal(size=(model.n_params,) * 2)
            delta_prime = exact_natural_gradient(oracles.Reparameterized(model, A), data, 0.0)
            worst = max(worst, np.max(np.abs(delta_prime - A @ delta)))
    ok = worst <= 1e-6
    report(9, ok, f"9 (model, A) pairs, max|delta' - A delta|={worst:.1e}")
    assert ok


@pytest.fixture(scope="module")
def trend_runs(tmp_path_factory):
    """Criterion 10 runs: ``{(algorithm, seed): run directory}`` plus total runtime."""
    root = tmp_path_factory.mktemp("trend")
    base = cfgmod.override(cfgmod.load(CONFIG), **{"output.clock": "off"})
    runs = {}
    t0 = time.perf_counter()
    for algorithm in ALGORITHMS:
        for seed in SEEDS:
            out = root / f"{algorithm}_{seed}"
            cfg = cfgmod.override(base, **{"train.algorithm": algorithm, "train.seed": seed,
                                           "output.directory": str(out)})
            assert run_experiment(cfg) == 0
            runs[algorithm, seed] = out
    return runs, time.perf_counter() - t0, base


def test_criterion_10_desk_scale_trend(trend_runs):
    runs, elapsed, _ = trend_runs
    final, improved = {}, {}
    for (algorithm, seed), out in runs.items():
        rows = read_metrics(out / "metrics.csv")
        assert rows[-1]["epoch"] == "30"
        start, end = float(rows[0]["train_loglik"]), float(rows[-1]["train_loglik"])
        final[algorithm, seed] = end
        improved[algorithm, seed] = end > start
    all_improve = all(improved.values())
    wins = sum(final["mfng", s] >= final["sml", s] for s in SEEDS)
    ok = all_improve and wins >= 4 and elapsed < 600
    means = ", ".join(f"{a}={np.mean([final[a, s] for s in SEEDS]):.3f}" for a in ALGORITHMS)
    report(10, ok, f"improved {sum(improved.values())}/15 runs, MFNG>=SML in {wins}/5 seeds, "
                   f"mean final loglik {means}, {elapsed:.0f}s")
    assert ok


def test_criterion_11_byte_identical_metrics(trend_runs, tmp_path):
    runs, _, base = trend_runs
    identical = 0
    for algorithm in ALGORITHMS:
        out = tmp_path / algorithm
        cfg = cfgmod.override(base, **{"train.algorithm": algorithm, "train.seed": 0,
                                       "output.directory": str(out)})
        assert run_experiment(cfg) == 0
        identical += (out / "metrics.csv").read_bytes() == (runs[algorithm, 0] / "metrics.csv").read_bytes()
    ok = identical == len(ALGORITHMS)
    report(11, ok, f"repeat runs with seed 0 byte-identical for {identical}/{len(ALGORITHMS)} algorithms")
    assert ok
