import math

import numpy as np
import pytest

from boem.datasets import example_files
from boem.graph import from_edges, icar_sampling_basis
from boem.io import read_adjacency, read_population
from boem.mcmc import McmcConfig
from boem.model import Offsets
from boem.simulate import (
    GenConfig,
    aggregate_metrics,
    excess_errors,
    generate_truth,
    metrics_rows,
    run_replication,
    run_validation,
)


@pytest.fixture(scope="module")
def example():
    f = example_files()
    ids, pop = read_population(f.population, 2018, 1, 60)
    g = read_adjacency(f.adjacency, ids)
    return g, pop


def test_all_structural_zeros(example):
    g, pop = example
    off = Offsets(7e-6, 7e-6 * pop)
    t = generate_truth(g, off, GenConfig(rho_true=1.0), np.random.default_rng(0))
    assert np.all(t.y == 0)


def test_structural_zero_fraction(example):
    g, pop = example
    off = Offsets(7e-6, 7e-6 * pop)
    t = generate_truth(g, off, GenConfig(), np.random.default_rng(1))
    assert t.pi.shape == (159, 60)
    assert abs(t.pi.mean() - 0.2) <= 0.02


def test_vanishing_scales_limit():
    ids = [f"a{i}" for i in range(30)]
    g = from_edges(list(zip(ids[:-1], ids[1:])), ids)
    X = np.full((30, 60), 3.0)
    gen = GenConfig(tau_true=1e12, sd_v_true=0.0, sd_omega_true=0.0, sd_kappa_true=0.0)
    t = generate_truth(g, Offsets(1.0, X), gen, np.random.default_rng(2))
    expected = 3.0 * math.exp(0.1) * 0.8
    # ZIP variance of each cell
    mu = 3.0 * math.exp(0.1)
    var = 0.8 * mu + 0.2 * 0.8 * mu**2
    assert abs(t.y.mean() - expected) <= 3 * math.sqrt(var / t.y.size)


def test_truth_spatial_field_has_icar_covariance():
    ids = [f"a{i}" for i in range(6)]
    g = from_edges(list(zip(ids[:-1], ids[1:])) + [("a0", "a3")], ids)
    B = icar_sampling_basis(g)
    gen = GenConfig(tau_true=4.0)
    X = np.ones((6, 2))
    us = np.stack([generate_truth(g, Offsets(1.0, X), gen, np.random.default_rng([7, k])).u for k in range(20_000)])
    np.testing.assert_allclose(np.cov(us.T), B @ B.T / 4.0, atol=0.01)
    np.testing.assert_allclose(us.sum(axis=1), 0.0, atol=1e-10)


def test_metrics_example():
    m = aggregate_metrics([1, -1, 2], [10, 10, 10], [True, True, True])
    assert m.me == pytest.approx(2 / 3, abs=1e-3)
    assert (m.mde, m.mae, m.mse) == (1.0, 1.0, 2.0)
    assert m.mre == pytest.approx(0.0667, abs=1e-4)
    assert m.coverage95 == 1.0 and m.n_leftout == 3


def test_metrics_zero_errors_and_empty():
    m = aggregate_metrics(np.zeros(5), np.arange(5), np.ones(5, bool))
    assert m.me == m.mde == m.mae == m.mse == m.mre == 0.0
    with pytest.raises(ValueError):
        aggregate_metrics([], [], [])


def test_metrics_permutation_invariant():
    rng = np.random.default_rng(3)
    e = rng.integers(-3, 4, 200).astype(float)
    t = rng.integers(0, 6, 200)
    f = rng.random(200) < 0.9
    p = rng.permutation(200)
    a, b = aggregate_metrics(e, t, f), aggregate_metrics(e[p], t[p], f[p])
    for k, v in a.as_dict().items():
        assert v == pytest.approx(b.as_dict()[k], abs=1e-14)


def test_cancellation_identity():
    rng = np.random.default_rng(4)
    pred = rng.integers(0, 5, size=(10, 36)).astype(float)
    truth = rng.integers(0, 5, size=(10, 36)).astype(float)
    for _ in range(5):
        observed = rng.integers(0, 50, size=(10, 36)).astype(float)
        np.testing.assert_array_equal(excess_errors(observed, pred, truth), truth - pred)


def test_oracle_replication(example):
    g, pop = example
    cfg = McmcConfig(n_chains=1, n_iterations=2, n_burnin=1, thin=1)
    r = run_replication(g, pop, 7e-6, GenConfig(), cfg, 24, oracle=True)
    m = aggregate_metrics(r.errors, r.truths, r.covered)
    assert m.n_leftout == 159 * 36 == 5724
    assert m.me == m.mde == m.mae == m.mse == 0.0
    assert m.coverage95 == 1.0


def test_small_replication_runs_and_is_deterministic():
    ids = [f"a{i}" for i in range(8)]
    g = from_edges(list(zip(ids[:-1], ids[1:])), ids)
    pop = np.full((8, 36), 200_000)
    cfg = McmcConfig(n_chains=2, n_iterations=300, n_burnin=150, thin=3)
    a = run_validation(g, pop, 2e-5, GenConfig(seed=5), cfg, 24, n_replications=2, ppd_samples=100)
    b = run_validation(g, pop, 2e-5, GenConfig(seed=5), cfg, 24, n_replications=2, ppd_samples=100)
    assert np.array_equal(a[1].pred_med, b[1].pred_med)
    assert not np.array_equal(a[0].truth.y, a[1].truth.y)
    rows = metrics_rows(a)
    assert [r["replication"] for r in rows] == [0, 1, "all"]
    assert rows[-1]["n_leftout"] == 2 * 8 * 12
    assert 0.0 <= rows[-1]["coverage95"] <= 1.0
