import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from netcausal.block import curie_weiss_cell_means
from netcausal.model import OutcomeParams, covariate_distribution, external_field, make_interaction
from netcausal.oracle import (OracleLimit, PopulationTooLarge, enumerate_states,
                              exact_direct_effect, exact_effects, exact_indirect_effect,
                              exact_log_partition, exact_marginals, quadratic_energy_table,
                              treatment_contract, treatment_transform, unit_effects)
from netcausal.parisi import log2cosh
from netcausal.rng import make_rng

NONE = covariate_distribution("none")


def _instance(n, seed, beta=0.8, d=1):
    rng = make_rng(seed)
    A = make_interaction("gaussian", n, seed=seed, beta=beta).entries
    t = rng.choice([-1.0, 1.0], n)
    x = rng.uniform(-1, 1, (n, d))
    p = OutcomeParams(rng.uniform(-1, 1), rng.uniform(-1, 1, d), rng.uniform(-0.5, 0.5))
    return A, t, x, p


def test_log_partition_product_measure():
    A, t, x, p = _instance(9, 1)
    h = external_field(t, x, p)
    got = exact_log_partition(np.zeros((9, 9)), t, x, p)
    assert got == pytest.approx(np.sum(log2cosh(h)), abs=1e-12)


def test_log_partition_single_spin():
    assert exact_log_partition(np.zeros((1, 1)), [1.0], None, OutcomeParams(0.0)) == pytest.approx(np.log(2))


@given(st.integers(0, 5000), st.integers(2, 8))
def test_log_partition_and_marginals_match_bruteforce(seed, n):
    A, t, x, p = _instance(n, seed)
    h = external_field(t, x, p)
    assert exact_log_partition(A, t, x, p) == pytest.approx(oracles.log_partition(A, h), abs=1e-11)
    assert np.allclose(exact_marginals(A, t, x, p), oracles.marginals(A, h), atol=1e-12)


def test_log_partition_curie_weiss_collapsed():
    n = 10
    A = make_interaction("curie_weiss", n, beta=1.5)
    t = np.array([1.0] * 6 + [-1.0] * 4)
    lz = exact_log_partition(A, t, None, OutcomeParams(0.5))
    _, _, lz_collapsed = curie_weiss_cell_means(6, 4, 1.5, 0.5)
    assert lz == pytest.approx(lz_collapsed, abs=1e-10)


def test_population_limits():
    with pytest.raises(PopulationTooLarge):
        exact_log_partition(np.zeros((21, 21)), np.ones(21), None, OutcomeParams(0.1))
    with pytest.raises(ValueError):
        OracleLimit(max_n=25)
    with pytest.raises(PopulationTooLarge):
        exact_effects(np.zeros((15, 15)), NONE, OutcomeParams(0.1))


def test_marginals_closed_forms():
    A, t, x, p = _instance(8, 3)
    h = external_field(t, x, p)
    assert np.allclose(exact_marginals(np.zeros((8, 8)), t, x, p), np.tanh(h), atol=1e-14)
    zero = OutcomeParams(0.0, np.zeros(1), 0.0)
    assert np.allclose(exact_marginals(A, t, x, zero), 0.0, atol=1e-14)


def test_marginals_match_long_glauber():
    from netcausal.glauber import ChainConfig, run_chain

    n = 12
    A = make_interaction("block_model", n, alpha=1.0, beta=0.4).entries
    t = make_rng(4).choice([-1.0, 1.0], n)
    p = OutcomeParams(0.3)
    res = run_chain(ChainConfig(200_000, 1000, seed=7), t, None, A, p)
    exact = exact_marginals(A, t, None, p)
    # autocorrelation is short at this temperature; 1e-2 is several MC sigmas
    assert np.max(np.abs(res.marginals - exact)) < 1e-2


def test_energy_table_and_transform_against_bruteforce():
    n = 6
    A, _, x, p = _instance(n, 9)
    table = quadratic_energy_table(A)
    Y = enumerate_states(n)
    assert np.allclose(table, 0.5 * np.einsum("si,ij,sj->s", Y, A, Y))
    c = x @ p.theta + p.gamma
    logf, ty, ysum = treatment_transform(table, p.tau, c)
    for s, t in enumerate(Y):
        h = p.tau * t + c
        assert logf[s] == pytest.approx(oracles.log_partition(A, h), abs=1e-11)
        m = oracles.marginals(A, h)
        assert ty[s] == pytest.approx(t @ m, abs=1e-11)
        assert ysum[s] == pytest.approx(m.sum(), abs=1e-11)
        single = treatment_contract(table, p.tau, c, t)
        assert single[0] == pytest.approx(logf[s], abs=1e-11)
        assert single[1] == pytest.approx(ty[s], abs=1e-11)


def test_effects_closed_forms():
    tau = 0.7
    for n in (6, 14):
        r = exact_effects(np.zeros((n, n)), NONE, OutcomeParams(tau))
        assert r.de == pytest.approx(2 * np.tanh(tau), abs=1e-12)
        assert abs(r.ie) < 1e-12
    A = make_interaction("curie_weiss", 10, beta=1.2)
    dist = covariate_distribution("rademacher_d", d=1)
    r = exact_effects(A, dist, OutcomeParams(0.0, [0.4], 0.1))
    assert abs(r.de) < 1e-12 and abs(r.ie) < 1e-12


@given(st.integers(0, 5000), st.integers(2, 6))
def test_effects_match_bruteforce(seed, n):
    A, _, _, p = _instance(n, seed)
    r = exact_effects(A, NONE, OutcomeParams(p.tau, [], 0.0))
    de, ie = oracles.effects(A, p.tau)
    assert r.de == pytest.approx(de, abs=1e-12)
    assert r.ie == pytest.approx(ie, abs=1e-12)


def test_effects_enumerate_covariates():
    n = 4
    A, _, _, _ = _instance(n, 2)
    dist = covariate_distribution("custom_finite", support=[[-0.5], [1.0]], probs=[0.3, 0.7])
    p = OutcomeParams(0.6, [0.8], 0.0)
    de = ie = 0.0
    for combo in itertools.product(range(2), repeat=n):
        w = np.prod([dist.probs[c] for c in combo])
        xf = dist.support[list(combo), 0] * 0.8
        d1, i1 = oracles.effects(A, 0.6, xf)
        de += w * d1
        ie += w * i1
    r = exact_effects(A, dist, p)
    assert r.meta["covariates"] == "enumerated"
    assert r.de == pytest.approx(de, abs=1e-12) and r.ie == pytest.approx(ie, abs=1e-12)


def test_full_and_monte_carlo_agree():
    A = make_interaction("curie_weiss", 10, beta=1.2)
    p = OutcomeParams(0.4)
    full = exact_direct_effect(A, NONE, p)
    mc = exact_indirect_effect(A, NONE, p, mode="monte_carlo", k=2000, seed=3)
    assert abs(mc.de - full.de) <= 3 * mc.se_de
    assert abs(mc.ie - full.ie) <= 3 * mc.se_ie
    assert full.ie > 0.1


def test_monte_carlo_needs_replicates():
    with pytest.raises(ValueError):
        exact_effects(np.zeros((4, 4)), NONE, OutcomeParams(0.1), mode="monte_carlo", k=0, seed=1)


def test_covariate_fallback_is_recorded():
    A = make_interaction("curie_weiss", 10, beta=0.5)
    dist = covariate_distribution("uniform_grid", d=1, levels=5)
    r = exact_effects(A, dist, OutcomeParams(0.3, [0.2]), seed=1,
                      limit=OracleLimit(covariate_draws=20))
    assert r.meta["covariates"] == "monte_carlo" and r.se_de > 0


def test_unit_effects_closed_forms():
    n = 6
    p = OutcomeParams(0.8)
    rng = make_rng(0)
    for i in range(n):
        rest = rng.choice([-1.0, 1.0], n - 1)
        de_i, ie_i = unit_effects(i, rest, np.zeros((n, n)), None, p)
        assert de_i == pytest.approx(2 * np.tanh(0.8), abs=1e-14) and abs(ie_i) < 1e-14
    A, _, _, _ = _instance(n, 5)
    assert unit_effects(2, -np.ones(n - 1), A, None, p)[1] == 0.0


def test_unit_effects_average_to_de():
    n = 7
    A, _, _, _ = _instance(n, 6)
    p = OutcomeParams(0.5)
    total = 0.0
    others = list(itertools.product([-1.0, 1.0], repeat=n - 1))
    for i in range(n):
        for rest in others:
            total += unit_effects(i, np.array(rest), A, None, p)[0]
    avg = total / (n * len(others))
    assert avg == pytest.approx(exact_effects(A, NONE, p).de, abs=1e-12)


@given(st.integers(0, 5000))
def test_log_partition_convex_in_tau(seed):
    A, t, x, p = _instance(8, seed)
    taus = np.arange(-2, 2.0001, 0.05)
    vals = np.array([exact_log_partition(A, t, x, p.replace(tau=s)) for s in taus])
    assert np.all(vals[2:] - 2 * vals[1:-1] + vals[:-2] >= -1e-9)


def test_log_partition_derivative_is_de_integrand():
    n = 8
    A, _, _, _ = _instance(n, 12)
    table = quadratic_energy_table(A)
    c = np.zeros(n)
    tau, h = 0.45, 1e-4
    logf_p, _, _ = treatment_transform(table, tau + h, c)
    logf_m, _, _ = treatment_transform(table, tau - h, c)
    deriv = (logf_p.mean() - logf_m.mean()) / (2 * h) / n
    de = exact_effects(A, NONE, OutcomeParams(tau)).de
    assert deriv == pytest.approx(de / 2, abs=1e-6)


@given(st.integers(0, 5000))
def test_stability_of_log_partition(seed):
    rng = make_rng(seed)
    n = int(rng.integers(2, 10))
    A, t, x, p = _instance(n, seed)
    E = rng.normal(size=(n, n)) * rng.uniform(0, 0.5)
    E = np.triu(E, 1) + np.triu(E, 1).T
    B = A + E
    h = external_field(t, x, p)
    dh = rng.uniform(-0.3, 0.3, n)
    lhs = abs(oracles.log_partition(A, h) - oracles.log_partition(B, h + dh)) / n
    assert lhs <= np.linalg.norm(E, 2) + np.max(np.abs(dh)) + 1e-12


def test_marginals_bounded():
    A = make_interaction("curie_weiss", 12, beta=8.0)
    m = exact_marginals(A, np.ones(12), None, OutcomeParams(4.0))
    assert np.all(np.abs(m) <= 1)
