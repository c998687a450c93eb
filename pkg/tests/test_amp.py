import numpy as np
import pytest

from netcausal.amp import (AmpConfig, AmpInstance, AmpRangeError, amp_de, amp_effects, amp_ie,
                           amp_run, amp_stability_probe, state_evolution)
from netcausal.model import make_interaction
from netcausal.parisi import (FieldDistribution, GridParams, ParisiMeasure, minimize_parisi,
                              solve_parisi_pde)
from netcausal.rng import make_rng


def standard_coupling(n, seed):
    return make_interaction("gaussian", n, seed=seed, beta=1.0).entries


@pytest.fixture(scope="module")
def hot_instance():
    n, beta, tau = 2000, 0.3, 0.5
    G = standard_coupling(n, 21)
    t = make_rng(22).choice([-1.0, 1.0], n)
    fields = FieldDistribution.treatment_mixture(tau)
    mu = minimize_parisi(beta, fields)
    return G, beta, tau, t, fields, mu


def test_zero_beta_is_independent():
    n = 50
    h = make_rng(0).uniform(-1, 1, n)
    mu = ParisiMeasure.replica_symmetric(0.3)
    st = amp_run(standard_coupling(n, 1), 0.0, h, np.zeros(n), mu, 6)
    for k in range(6):
        assert np.allclose(st.history[k], np.tanh(h), atol=1e-7)


def test_single_iteration_is_denoised_field():
    n = 40
    rng = make_rng(1)
    h1, h2 = rng.uniform(-1, 1, n), rng.uniform(-0.3, 0.3, n)
    mu = ParisiMeasure([0.2, 0.6], [0.3, 1.0])
    sol = solve_parisi_pde(mu, 0.9, field_bound=1.3)
    st = amp_run(standard_coupling(n, 2), 0.9, h1, h2, sol, 1)
    assert np.array_equal(st.m, sol.evaluate(0.2, h1 + h2, 1))
    assert np.all(st.w == 0.0)


def test_iterates_bounded_and_onsager_in_unit_interval():
    n = 300
    G = standard_coupling(n, 3)
    h = make_rng(3).choice([-0.5, 0.5], n)
    mu = minimize_parisi(1.4, FieldDistribution.treatment_mixture(0.5), J=1)
    st = amp_run(G, 1.4, h, np.zeros(n), mu, 15)
    assert np.all(np.abs(st.history) <= 1.0)
    assert all(0.0 <= d <= 1.0 for d in st.onsager)


def test_grid_exit_raises_after_one_extension():
    n = 20
    G = 50.0 * np.ones((n, n))
    np.fill_diagonal(G, 0.0)
    mu = ParisiMeasure.replica_symmetric(0.5)
    with pytest.raises(AmpRangeError):
        amp_run(G, 1.0, np.ones(n), np.zeros(n), mu, 6, GridParams(half_width=14.0))


def test_state_evolution_shape(hot_instance):
    _, beta, _, _, fields, mu = hot_instance
    se = state_evolution(beta, fields, mu, 30)
    assert se.a[0] == 0.0
    assert np.all(np.diff(se.a) >= -1e-12)
    # the optimizer returns q to about 1e-7, so the ceiling carries that slack
    assert np.all(se.a <= beta ** 2 * se.q + 1e-7)
    assert se.a[-1] == pytest.approx(beta ** 2 * se.q, abs=1e-6)
    assert se.w_variance == pytest.approx(beta ** 2 * se.q)


def test_iterate_norm_matches_state_evolution(hot_instance):
    G, beta, tau, t, fields, mu = hot_instance
    st = amp_run(G, beta, tau * t, np.zeros(t.size), mu, 30)
    se = state_evolution(beta, fields, mu, 30)
    assert abs(st.m @ st.m / t.size - se.q) <= 0.05
    assert abs(st.overlap(5, 6) - se.overlap(5)) <= 0.05


def test_single_factor_estimators(hot_instance):
    G, beta, tau, t, _, mu = hot_instance
    st = amp_run(G, beta, tau * t, np.zeros(t.size), mu, 10, keep_history=False)
    sm = amp_run(G, beta, -tau * np.ones(t.size), np.zeros(t.size), mu, 10, keep_history=False)
    de = amp_de(st, t)
    assert amp_de(st, t, single_factor=True) == pytest.approx(de / 2)
    gap = float(np.mean(st.m) - np.mean(sm.m))
    assert amp_ie(st, sm, de) == pytest.approx(gap - de / 2)
    assert amp_ie(st, sm, de, single_factor=True) == pytest.approx(gap - de)


def test_amp_effects_closed_forms():
    n = 400
    G = standard_coupling(n, 5)
    est = amp_effects(G, 0.0, 0.6, cfg=AmpConfig(M=5, k_replicates=4))
    assert est.de == pytest.approx(2 * np.tanh(0.6), abs=1e-7)
    est = amp_effects(G, 0.4, 0.0, cfg=AmpConfig(M=10, k_replicates=20, seed=3))
    assert abs(est.de) <= 3 * est.se_de
    assert est.meta["M"] == 10 and "a_M" in est.meta


def test_stability_probe(hot_instance):
    G, beta, tau, t, fields, _ = hot_instance
    inst = AmpInstance(G, beta, tau * t, np.zeros(t.size), fields, M=20)
    assert np.all(amp_stability_probe(0.0, inst) == 0.0)
    small = amp_stability_probe(1e-3, inst)
    assert small[-1] <= 0.01
    d01 = amp_stability_probe(0.01, inst)[-1]
    d1 = amp_stability_probe(0.1, inst)[-1]
    assert d01 <= d1 + 1e-6
