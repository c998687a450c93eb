"""Approximate message passing for Gaussian couplings and its state evolution.

The denoiser is ``g = ∂_xΦ(q, ·)`` from the Parisi PDE solved at the optimal
measure, with ``q`` the smallest atom location. Iterates follow

    w^{k+1} = β G m^k − β² d_k m^{k−1},   x^{k+1} = w^{k+1} + h,   m^{k+1} = g(x^{k+1}),

with ``d_k`` the average of ``∂_xxΦ(q, x^k)`` and ``m^0 = 0``.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from .model import CovariateDistribution, EffectEstimate, as_array, covariate_term, draw_replicate
from .parallel import map_ordered
from .parisi import (FieldDistribution, GridParams, ParisiMeasure, ParisiOptConfig, ParisiResult,
                     PdeSolution, covariate_field_law, gauss_hermite, minimize_parisi,
                     solve_parisi_pde)
from .rng import split_seeds

Q_CLAMP = 1e-4


class AmpRangeError(RuntimeError):
    pass


def _time_q(mu: ParisiMeasure) -> float:
    q = mu.support_min
    return 0.0 if q < Q_CLAMP else q


@dataclass
class AmpState:
    w: np.ndarray
    x: np.ndarray
    m: np.ndarray
    m_prev: np.ndarray
    onsager: list
    k: int
    q: float
    history: np.ndarray | None = None
    extended: bool = False

    def overlap(self, j: int, k: int) -> float:
        """``(1/n)⟨m^j, m^k⟩`` for stored iterates (1-based)."""
        if self.history is None:
            raise ValueError("iterate history was not kept")
        return float(self.history[j - 1] @ self.history[k - 1] / self.history.shape[1])


def _solution(mu_star, beta: float, bound: float, grid: GridParams) -> PdeSolution:
    if isinstance(mu_star, PdeSolution):
        return mu_star
    if isinstance(mu_star, ParisiResult):
        mu_star = mu_star.mu
    return solve_parisi_pde(mu_star, beta, grid, bound)


def amp_run(G, beta: float, h1, h2, mu_star, M: int, grid: GridParams = GridParams(),
            keep_history: bool = True) -> AmpState:
    """Run ``M`` AMP iterations; ``G`` is the standardized coupling (entries of variance 1/n)."""
    if M < 1:
        raise ValueError("M must be at least 1")
    G = as_array(G)
    h = np.asarray(h1, dtype=float) + np.asarray(h2, dtype=float)
    n = h.shape[0]
    if G.shape != (n, n):
        raise ValueError(f"coupling shape {G.shape} does not match fields of length {n}")
    sol = _solution(mu_star, beta, float(np.max(np.abs(h), initial=0.0)), grid)
    q = _time_q(sol.mu)
    extended = False

    def denoise(x):
        nonlocal sol, extended
        if np.max(np.abs(x)) > sol.half_width:
            if extended:
                raise AmpRangeError("AMP iterates left the PDE grid after one extension")
            wider = dataclasses.replace(grid, half_width=None)
            sol = solve_parisi_pde(sol.mu, beta, wider, float(np.max(np.abs(x))) + 4.0)
            extended = True
        return sol.evaluate(q, x, 1), float(np.mean(sol.evaluate(q, x, 2)))

    x = h.copy()
    w = np.zeros(n)
    m_prev = np.zeros(n)
    m, d = denoise(x)
    onsager = [d]
    history = [m] if keep_history else None
    for _ in range(1, M):
        w = beta * (G @ m) - beta ** 2 * d * m_prev
        x = w + h
        m_prev = m
        m, d = denoise(x)
        onsager.append(d)
        if keep_history:
            history.append(m)
    return AmpState(w, x, m, m_prev, onsager, M, q,
                    np.array(history) if keep_history else None, extended)


def amp_de(state: AmpState, t_bar, single_factor: bool = False) -> float:
    """``(2/n) Σ T̄_i m_i`` (or the single-factor variant when ``single_factor``)."""
    t_bar = np.asarray(t_bar, dtype=float)
    scale = 1.0 if single_factor else 2.0
    return scale * float(t_bar @ state.m) / t_bar.size


def amp_ie(state_t: AmpState, state_minus: AmpState, de: float, single_factor: bool = False) -> float:
    """Mean iterate difference between the two branches minus the DE correction."""
    corr = de if single_factor else 0.5 * de
    return float(np.mean(state_t.m) - np.mean(state_minus.m)) - corr


@dataclass
class StateEvolution:
    a: np.ndarray
    beta: float
    q: float

    @property
    def w_variance(self) -> float:
        return self.beta ** 2 * self.q

    @property
    def m_second_moment(self) -> float:
        return self.q

    def overlap(self, j: int, phi_values: np.ndarray | None = None) -> float:
        """Predicted ``E[M^j M^k]`` for ``j < k``: ``φ(a_j) / β²``."""
        if self.beta == 0:
            return self.q
        return float(self.a[j + 1] / self.beta ** 2) if j + 1 < self.a.size else float(
            self.a[-1] / self.beta ** 2)


def state_evolution(beta: float, fields: FieldDistribution, mu_star, M: int,
                    grid: GridParams = GridParams(), order: int = 41) -> StateEvolution:
    """Iterate ``a_{k+1} = φ(a_k)`` from ``a_0 = 0``.

    ``φ(t) = β² E[(E[g(v + G1 √t + G2 √(β²q − t)) | G1])²]`` with ``v`` drawn
    from ``fields``; both Gaussian averages use Gauss-Hermite nodes.
    """
    sol = _solution(mu_star, beta, fields.bound, grid)
    q = _time_q(sol.mu)
    z, w = gauss_hermite(order)
    top = beta ** 2 * q

    def phi(t):
        t = min(max(t, 0.0), top)
        pts = (fields.values[:, None, None] + np.sqrt(t) * z[None, :, None]
               + np.sqrt(top - t) * z[None, None, :])
        inner = sol.evaluate(q, pts, 1) @ w
        return beta ** 2 * float(fields.probs @ ((inner ** 2) @ w))

    a = [0.0]
    for _ in range(M):
        a.append(phi(a[-1]))
    return StateEvolution(np.array(a), beta, q)


@dataclass(frozen=True)
class AmpConfig:
    M: int = 30
    J: int = 1
    k_replicates: int = 50
    seed: int = 0
    paper_literal_amp_estimators: bool = False
    grid: GridParams = GridParams()
    opt: ParisiOptConfig = ParisiOptConfig()
    workers: int | None = None


@dataclass
class AmpSetup:
    """Parisi minimizers and PDE solutions shared by all replicates."""

    uniform: ParisiResult
    minus: ParisiResult
    sol_uniform: PdeSolution
    sol_minus: PdeSolution
    field_law: FieldDistribution
    extra: dict = field(default_factory=dict)


def amp_setup(beta: float, tau: float, h_law: FieldDistribution, cfg: AmpConfig) -> AmpSetup:
    uni = FieldDistribution.treatment_mixture(tau, h_law.values, h_law.probs, "uniform")
    neg = FieldDistribution.treatment_mixture(tau, h_law.values, h_law.probs, "minus")
    r_u = minimize_parisi(beta, uni, 0.0, cfg.J, cfg.opt)
    r_n = minimize_parisi(beta, neg, 0.0, cfg.J, cfg.opt)
    bound = uni.bound
    return AmpSetup(r_u, r_n, solve_parisi_pde(r_u.mu, beta, cfg.grid, bound),
                    solve_parisi_pde(r_n.mu, beta, cfg.grid, bound), uni)


def amp_effects(G, beta: float, tau: float, x_dist: CovariateDistribution | None = None,
                theta=(), cfg: AmpConfig = AmpConfig(), setup: AmpSetup | None = None) -> EffectEstimate:
    """Replicate-averaged AMP estimates of DE and IE on coupling ``β G``."""
    start = time.perf_counter()
    G = as_array(G)
    n = G.shape[0]
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if x_dist is None:
        x_dist = CovariateDistribution("none")
    if setup is None:
        setup = amp_setup(beta, tau, covariate_field_law(x_dist, theta), cfg)
    seeds = split_seeds(cfg.seed, cfg.k_replicates)
    literal = cfg.paper_literal_amp_estimators

    def one(s):
        draw = draw_replicate(n, x_dist, s)
        h2 = covariate_term(draw.x_bar, theta, n)
        st = amp_run(G, beta, tau * draw.t_bar, h2, setup.sol_uniform, cfg.M, cfg.grid, False)
        sm = amp_run(G, beta, -tau * np.ones(n), h2, setup.sol_minus, cfg.M, cfg.grid, False)
        de = amp_de(st, draw.t_bar, literal)
        return de, amp_ie(st, sm, de, literal)

    vals = np.array(map_ordered(one, seeds, cfg.workers))
    k = len(seeds)
    se = vals.std(axis=0, ddof=1) / np.sqrt(k) if k > 1 else np.full(2, np.inf)
    se_law = state_evolution(beta, setup.field_law, setup.sol_uniform, cfg.M, cfg.grid)
    meta = {"J": cfg.J, "q": _time_q(setup.uniform.mu), "M": cfg.M, "a_M": float(se_law.a[-1]),
            "k_replicates": k, "single_factor": literal,
            "parisi_converged": bool(setup.uniform.converged and setup.minus.converged)}
    return EffectEstimate(float(vals[:, 0].mean()), float(vals[:, 1].mean()), float(se[0]),
                          float(se[1]), "amp", n, seeds, time.perf_counter() - start, meta)


@dataclass
class AmpInstance:
    """Fixed standardized coupling, fields and their law, for stability probes."""

    G: np.ndarray
    beta: float
    h1: np.ndarray
    h2: np.ndarray
    fields: FieldDistribution
    M: int = 20
    J: int = 1


def amp_stability_probe(eps: float, instance: AmpInstance,
                        opt: ParisiOptConfig = ParisiOptConfig()) -> np.ndarray:
    """``Δ_k = (1/n)‖m^k − m̃^k‖²`` when every field is shifted by ``eps``.

    The perturbed run re-minimizes the Parisi functional for the shifted field law.
    """
    inst = instance
    mu = minimize_parisi(inst.beta, inst.fields, 0.0, inst.J, opt)
    mu_t = mu if eps == 0 else minimize_parisi(inst.beta, inst.fields.shifted(eps), 0.0, inst.J, opt)
    base = amp_run(inst.G, inst.beta, inst.h1, inst.h2, mu, inst.M, opt.grid)
    pert = amp_run(inst.G, inst.beta, inst.h1 + eps, inst.h2, mu_t, inst.M, opt.grid)
    diff = base.history - pert.history
    return np.einsum("kn,kn->k", diff, diff) / diff.shape[1]
