import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from netcausal.limits import (BlockGraphon, FieldLevels, NonDifferentiablePoint,
                              limiting_effects_graphon, meanfield_value, phi_tau,
                              psi_reconstruct, rate_function)
from netcausal.model import OutcomeParams, make_interaction
from netcausal.oracle import exact_log_partition
from netcausal.parisi import log2cosh
from netcausal.rng import make_rng


def test_rate_function_values():
    assert rate_function(0.0) == 0.0
    assert rate_function(1.0) == pytest.approx(np.log(2), abs=1e-15)
    assert rate_function(-1.0) == pytest.approx(np.log(2), abs=1e-15)
    with pytest.raises(ValueError):
        rate_function(1.01)


@given(st.floats(-0.99, 0.99))
def test_rate_function_shape(m):
    assert rate_function(m) >= 0
    assert rate_function(m) == pytest.approx(rate_function(-m), abs=1e-15)
    h = 1e-4
    curv = (rate_function(m + h) - 2 * rate_function(m) + rate_function(m - h)) / h ** 2
    assert curv >= 1 - 1e-4


def test_phi_examples():
    n = 10
    A = make_interaction("curie_weiss", n, beta=0.8).entries
    t = make_rng(0).choice([-1.0, 1.0], n)
    assert phi_tau(A, t, 0.0) == pytest.approx(0.5 * t @ A @ t / n + np.log(2), abs=1e-14)
    assert phi_tau(np.zeros((n, n)), t, 0.9) == pytest.approx(float(log2cosh(0.9)), abs=1e-14)


def test_phi_tracks_free_energy_at_large_tau():
    n, tau = 12, 6.0
    A = make_interaction("curie_weiss", n, beta=0.8)
    t = make_rng(1).choice([-1.0, 1.0], n)
    free = exact_log_partition(A, t, None, OutcomeParams(tau)) / n
    assert abs(free - phi_tau(A, t, tau)) <= 0.02


def test_psi_without_interaction():
    grid = np.arange(0, 3.0 + 1e-9, 0.01)
    r = psi_reconstruct(np.zeros((5, 5)), grid, 2 * np.tanh(grid))
    assert r.value == pytest.approx(np.log(2), abs=1e-4)
    assert not r.coarse


def test_psi_with_zero_effects_is_anchor():
    A = make_interaction("curie_weiss", 8, beta=0.5).entries
    grid = np.linspace(0, 2, 11)
    r = psi_reconstruct(A, grid, np.zeros(11))
    assert r.value == r.anchor == pytest.approx(float(log2cosh(2.0)), abs=1e-14)


def test_psi_flags_coarse_grids_and_bad_input():
    r = psi_reconstruct(np.zeros((3, 3)), [0.0, 2.0], [0.0, 1.9])
    assert r.coarse and r.max_jump == pytest.approx(1.9)
    with pytest.raises(ValueError):
        psi_reconstruct(np.zeros((3, 3)), [0.5, 1.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        psi_reconstruct(np.zeros((3, 3)), [0.0, 1.0], [0.0])


def test_psi_error_is_second_order():
    errs = []
    for step in (0.1, 0.05):
        grid = np.arange(0, 2.0 + 1e-9, step)
        errs.append(abs(psi_reconstruct(np.zeros((2, 2)), grid, 2 * np.tanh(grid)).value - np.log(2)))
    assert errs[1] <= errs[0] / 3.5


def test_graphon_validation():
    with pytest.raises(ValueError):
        BlockGraphon([[0.1, 0.2], [0.3, 0.1]], [0.5, 0.5])
    with pytest.raises(ValueError):
        BlockGraphon([[0.1]], [0.9])
    W = BlockGraphon([[0.2, 0.1], [0.1, 0.3]], [0.4, 0.6])
    assert W.B == 2 and W.digest() == BlockGraphon(W.W.copy(), W.p.copy()).digest()


def test_meanfield_decoupled_sites():
    levels = FieldLevels([0.3, -0.5], [0.25, 0.75])
    W = BlockGraphon(np.zeros((2, 2)), [0.5, 0.5])
    r = meanfield_value(W, 0.7, levels, gamma=0.1)
    fields = np.array([0.3, -0.5])[:, None] + np.array([0.7, -0.7])[None, :] + 0.1
    weights = np.array([0.25, 0.75])[:, None] * 0.5
    assert r.value == pytest.approx(float(np.sum(weights * log2cosh(fields))), abs=1e-10)


def test_meanfield_subcritical_and_supercritical():
    assert meanfield_value(BlockGraphon.constant(0.5), 0.0).value == pytest.approx(np.log(2), abs=1e-12)
    r = meanfield_value(BlockGraphon.constant(1.5), 0.0)
    ref, m_star = oracles.scalar_meanfield(1.5)
    assert r.value == pytest.approx(ref, abs=1e-6)
    assert abs(abs(r.block_mags[0]) - abs(m_star)) <= 1e-5
    assert abs(m_star) == pytest.approx(0.858, abs=1e-3)


def test_meanfield_convex_in_tau_and_gamma():
    W = BlockGraphon([[0.9, 0.3], [0.3, 0.6]], [0.3, 0.7])
    taus = np.linspace(-1, 1, 21)
    v = np.array([meanfield_value(W, s).value for s in taus])
    assert np.all(v[2:] - 2 * v[1:-1] + v[:-2] >= -1e-9)
    v = np.array([meanfield_value(W, 0.4, gamma=g).value for g in taus])
    assert np.all(v[2:] - 2 * v[1:-1] + v[:-2] >= -1e-9)


def test_branch_consistency():
    W = BlockGraphon([[1.1, 0.2], [0.2, 0.4]], [0.5, 0.5])
    levels = FieldLevels([0.2, -0.2], [0.5, 0.5])
    a = meanfield_value(W, 0.6, levels, 0.1, "T_minus1").value
    b = meanfield_value(W, 0.6, levels, 0.1, p_plus=0.0).value
    assert a == b
    with pytest.raises(ValueError):
        meanfield_value(W, 0.6, branch="sideways")


def test_graphon_effects_closed_forms():
    W = BlockGraphon(np.zeros((1, 1)), [1.0])
    r = limiting_effects_graphon(W, 0.6)
    assert r.de == pytest.approx(2 * np.tanh(0.6), abs=1e-8)
    assert abs(r.ie) <= 1e-8
    sub = BlockGraphon([[0.5, 0.2], [0.2, 0.3]], [0.5, 0.5])
    assert abs(limiting_effects_graphon(sub, 0.0).de) <= 1e-8


def test_graphon_effects_curie_weiss_values():
    r = limiting_effects_graphon(BlockGraphon.constant(0.8), 0.4)
    # self-consistent magnetizations for the two treatment arms
    m = 0.0
    for _ in range(2000):
        mp, mm = np.tanh(0.8 * m + 0.4), np.tanh(0.8 * m - 0.4)
        m = 0.5 * (mp + mm)
    assert r.de == pytest.approx(mp - mm, abs=1e-7)
    assert r.fd_gap <= 1e-2


def test_kink_is_reported():
    with pytest.raises(NonDifferentiablePoint) as err:
        limiting_effects_graphon(BlockGraphon.constant(1.5), 0.0)
    assert err.value.left != err.value.right
    with pytest.raises(ValueError):
        limiting_effects_graphon(BlockGraphon.constant(0.5), 0.2, fd_step=0.0)
