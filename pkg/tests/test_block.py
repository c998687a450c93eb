import numpy as np
import pytest
from hypothesis import given, strategies as st

from netcausal.block import (BlockBudgetExceeded, BlockEstimatorConfig, build_cells, collapse,
                             collapsed_expectations, curie_weiss_cell_means,
                             discretize_covariates, estimate_effects)
from netcausal.model import CovariateMatrix, OutcomeParams, covariate_distribution, make_interaction
from netcausal.oracle import exact_effects, exact_log_partition, exact_marginals
from netcausal.regularity import BlockApproximation, block_approximation
from netcausal.rng import make_rng


def random_blocks(n, K, seed, scale=1.5):
    rng = make_rng(seed)
    labels = rng.integers(1, K + 1, n)
    labels[:K] = np.arange(1, K + 1)
    C = rng.uniform(-scale, scale, (K, K))
    C = (C + C.T) / 2 / n
    B = BlockApproximation(labels.astype(np.int64), C, 0.0)
    A = B.dense()
    np.fill_diagonal(A, 0.0)
    return A, B


def test_build_cells_counts():
    B = BlockApproximation(np.array([1, 1, 2, 2, 0]), np.zeros((2, 2)), 0.0)
    cp = build_cells(B, [0, 1, 0, 1, 0], [1, -1, 1, 1, -1])
    assert cp.sizes[(0, 1, 1)] == 1 and cp.sizes[(1, 1, -1)] == 1
    assert cp.sizes[(0, 2, 1)] == 1 and cp.sizes[(1, 2, 1)] == 1
    assert cp.sizes[(0, 0, -1)] == 1
    assert sum(cp.sizes.values()) == 5
    with pytest.raises(ValueError):
        build_cells(B, [0, 0, 0, 0, 0], [1, 0, 1, 1, 1])
    with pytest.raises(ValueError):
        build_cells(B, [0, 0, 0, 0, 3], [1, 1, 1, 1, 1], n_levels=2)


def test_zero_coupling_cell_means():
    n = 9
    B = BlockApproximation(np.ones(n, dtype=np.int64), np.zeros((1, 1)), 0.0)
    t = np.array([1.0] * 4 + [-1.0] * 5)
    cp = build_cells(B, np.zeros(n, dtype=np.int64), t)
    means = collapsed_expectations(cp, B, OutcomeParams(0.6))
    assert means[(0, 1, 1)] == pytest.approx(4 * np.tanh(0.6), abs=1e-12)
    assert means[(0, 1, -1)] == pytest.approx(-5 * np.tanh(0.6), abs=1e-12)


@pytest.mark.parametrize("beta,tau,gamma", [(0.8, 0.4, 0.0), (1.5, 0.1, 0.2), (0.3, -0.7, 0.5)])
def test_curie_weiss_matches_double_sum(beta, tau, gamma):
    n = 13
    A = make_interaction("curie_weiss", n, beta=beta)
    B = block_approximation(A.entries, 1e-9, include_diagonal=False)
    assert B.K == 1
    t = np.array([1.0] * 8 + [-1.0] * 5)
    cp = build_cells(B, np.zeros(n, dtype=np.int64), t)
    means = collapsed_expectations(cp, B, OutcomeParams(tau, [], gamma))
    vp, vm, logz = curie_weiss_cell_means(8, 5, beta, tau, gamma)
    assert means[(0, 1, 1)] == pytest.approx(vp, abs=1e-10)
    assert means[(0, 1, -1)] == pytest.approx(vm, abs=1e-10)
    cd = collapse(cp, B, OutcomeParams(tau, [], gamma), lambda s: tau * s)
    assert cd.log_partition() == pytest.approx(logz, abs=1e-10)


@given(st.integers(0, 10_000), st.integers(1, 3))
def test_cell_means_match_enumeration(seed, K):
    n = 12
    A, B = random_blocks(n, K, seed)
    rng = make_rng(seed + 1)
    t = rng.choice([-1.0, 1.0], n)
    x = rng.choice([-1.0, 1.0], (n, 1))
    p = OutcomeParams(rng.uniform(-1, 1), [rng.uniform(-1, 1)], rng.uniform(-0.5, 0.5))
    levels = (x[:, 0] > 0).astype(np.int64)
    cp = build_cells(B, levels, t, 2)
    means = collapsed_expectations(cp, B, p, level_fields=np.array([-1.0, 1.0]) * p.theta[0])
    m = exact_marginals(A, t, x, p)
    for key, idx in cp.cells.items():
        assert means[key] == pytest.approx(m[idx].sum(), abs=1e-9)
    cd = collapse(cp, B, p, lambda s: p.tau * s, np.array([-1.0, 1.0]) * p.theta[0])
    assert cd.log_partition() == pytest.approx(exact_log_partition(A, t, x, p), abs=1e-9)


def test_leftover_units_are_free():
    n = 8
    labels = np.array([1, 1, 1, 0, 0, 2, 2, 2])
    C = np.array([[0.3, 0.1], [0.1, -0.2]])
    B = BlockApproximation(labels, C, 0.0)
    A = B.dense()
    np.fill_diagonal(A, 0.0)
    t = np.array([1.0, -1.0, 1.0, 1.0, -1.0, 1.0, 1.0, -1.0])
    p = OutcomeParams(0.5)
    cp = build_cells(B, np.zeros(n, dtype=np.int64), t)
    means = collapsed_expectations(cp, B, p)
    m = exact_marginals(A, t, None, p)
    for key, idx in cp.cells.items():
        assert means[key] == pytest.approx(m[idx].sum(), abs=1e-10)


def test_block_cap_and_lattice_budget():
    A, B = random_blocks(12, 3, 0)
    cp = build_cells(B, np.zeros(12, dtype=np.int64), np.ones(12))
    with pytest.raises(BlockBudgetExceeded):
        collapsed_expectations(cp, B, OutcomeParams(0.1), block_cap=2)
    with pytest.raises(BlockBudgetExceeded) as err:
        collapsed_expectations(cp, B, OutcomeParams(0.1), budget=10)
    assert err.value.lattice is not None


def test_discretize_examples():
    x = CovariateMatrix(np.array([[0.26], [-0.9], [1.0], [0.0]]))
    d = discretize_covariates(x, 1)
    assert np.allclose(d.values[:, 0], [0.5, -1.0, 1.0, 0.0])
    assert d.is_finite and d.support.shape[0] == 4
    d0 = discretize_covariates(x, 0)
    assert np.allclose(d0.values[:, 0], [0.0, -1.0, 1.0, 0.0])
    d2 = discretize_covariates(x, 2)
    assert np.allclose(d2.values[:, 0], [0.25, -1.0, 1.0, 0.0])
    with pytest.raises(ValueError):
        discretize_covariates(x, -1)


@given(st.integers(0, 10_000), st.integers(0, 6))
def test_discretization_error_bound(seed, m):
    vals = make_rng(seed).uniform(-1, 1, (50, 2))
    d = discretize_covariates(CovariateMatrix(vals), m)
    assert np.max(np.abs(d.values - vals)) <= 2.0 ** (-m - 1) + 1e-15


def test_estimator_closed_forms():
    n = 14
    est = estimate_effects(np.zeros((n, n)), None, OutcomeParams(0.7), k_replicates=20, seed=1)
    assert est.de == pytest.approx(2 * np.tanh(0.7), abs=1e-12)
    # per allocation the spillover is tanh(τ)·mean(T̄); zero only on average
    assert abs(est.ie) <= 3 * est.se_ie
    A = make_interaction("curie_weiss", n, beta=1.2)
    est = estimate_effects(A, None, OutcomeParams(0.0), k_replicates=20, seed=1)
    assert abs(est.de) < 1e-12 and abs(est.ie) < 1e-12


def test_estimator_matches_oracle_curie_weiss():
    n = 12
    A = make_interaction("curie_weiss", n, beta=1.2)
    p = OutcomeParams(0.4)
    est = estimate_effects(A, None, p, k_replicates=2000, seed=11)
    exact = exact_effects(A, None, p)
    assert est.meta["K"] == 1
    assert abs(est.de - exact.de) <= 3 * est.se_de
    assert abs(est.ie - exact.ie) <= 3 * est.se_ie


def test_estimator_with_covariates_matches_oracle():
    n = 10
    A = make_interaction("block_model", n, alpha=1.0, beta=0.3)
    dist = covariate_distribution("rademacher_d", d=1)
    p = OutcomeParams(0.5, [0.4], 0.1)
    est = estimate_effects(A, dist, p, k_replicates=1000, seed=4)
    exact = exact_effects(A, dist, p)
    assert abs(est.de - exact.de) <= 3 * est.se_de
    assert abs(est.ie - exact.ie) <= 3 * est.se_ie


def test_continuous_covariates_need_levels():
    dist = covariate_distribution("uniform_box", d=1)
    p = OutcomeParams(0.5, [0.4])
    with pytest.raises(ValueError):
        estimate_effects(np.zeros((6, 6)), dist, p, k_replicates=2)
    est = estimate_effects(np.zeros((6, 6)), dist, p,
                           config=BlockEstimatorConfig(k_replicates=5, m_levels=3))
    assert np.isfinite(est.de)


def test_theta_dimension_mismatch():
    dist = covariate_distribution("rademacher_d", d=2)
    with pytest.raises(ValueError):
        estimate_effects(np.zeros((5, 5)), dist, OutcomeParams(0.5, [0.4]), k_replicates=2)


def test_reproducible_and_seed_sensitive():
    A = make_interaction("curie_weiss", 20, beta=0.8)
    p = OutcomeParams(0.5)
    a = estimate_effects(A, None, p, k_replicates=30, seed=3)
    b = estimate_effects(A, None, p, k_replicates=30, seed=3)
    c = estimate_effects(A, None, p, k_replicates=30, seed=4)
    assert a.de == b.de and a.ie == b.ie
    assert a.de != c.de


def test_small_perturbation_moves_de_little():
    n = 60
    A = make_interaction("curie_weiss", n, beta=0.8).entries
    E = make_rng(5).normal(size=(n, n))
    E = np.triu(E, 1) + np.triu(E, 1).T
    E *= 0.01 / np.linalg.norm(E, 2)
    p = OutcomeParams(0.5)
    base = estimate_effects(A, None, p, k_replicates=40, seed=2)
    moved = estimate_effects(A + E, None, p, k_replicates=40, seed=2)
    assert abs(base.de - moved.de) <= 0.25
