"""Brute-force enumeration of the outcome Gibbs measure for small populations.

Spin states are indexed by bit patterns: bit ``i`` of the index is set when
``y_i = +1``. The quadratic energy table is built by a Gray-code walk with
incremental local-field updates.

Effects need, for every treatment vector ``t``, only the two scalars
``⟨t·y⟩`` and ``⟨1·y⟩``. The field ``τ t_i + c_i`` enters through a product of
per-unit 2x2 kernels, so all ``2^n`` partition functions and both derivatives
come out of one Kronecker-structured transform in ``O(n 2^n)`` operations.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numba
import numpy as np

from .model import (CovariateDistribution, CovariateMatrix, EffectEstimate, OutcomeParams,
                    as_array, covariate_term, draw_replicate, external_field)
from .rng import make_rng, split_seeds

HARD_MAX_N = 24


class PopulationTooLarge(ValueError):
    def __init__(self, n: int, max_n: int):
        self.n = n
        self.max_n = max_n
        super().__init__(f"population n={n} exceeds enumeration limit {max_n}")


@dataclass(frozen=True)
class OracleLimit:
    max_n: int = 20
    max_treatment_n: int = 14
    max_covariate_states: int = 10**6
    covariate_draws: int = 200

    def __post_init__(self):
        if self.max_n > HARD_MAX_N:
            raise ValueError(f"max_n cannot exceed {HARD_MAX_N}")
        if self.max_treatment_n > self.max_n:
            raise ValueError("max_treatment_n cannot exceed max_n")

    def check(self, n: int, treatment: bool = False) -> None:
        limit = self.max_treatment_n if treatment else self.max_n
        if n > limit:
            raise PopulationTooLarge(n, limit)


@numba.njit(cache=True)
def _gray_stream(J, h, want_marginals):
    """Streaming log-sum-exp over all states; returns (logZ, marginals)."""
    n = h.shape[0]
    y = -np.ones(n)
    f = J @ y
    e = 0.0
    for i in range(n):
        e += y[i] * (0.5 * f[i] + h[i])
    top = e
    s = 1.0
    comp = 0.0
    sy = y.copy()
    for k in range(1, 1 << n):
        j = 0
        while not (k >> j) & 1:
            j += 1
        e -= 2.0 * y[j] * (f[j] + h[j])
        delta = -2.0 * y[j]
        row = J[j]
        for l in range(n):
            f[l] += row[l] * delta
        y[j] = -y[j]
        if e > top:
            scale = np.exp(top - e)
            s = s * scale
            comp = comp * scale
            if want_marginals:
                for l in range(n):
                    sy[l] *= scale
            top = e
            w = 1.0
        else:
            w = np.exp(e - top)
        t = s + w
        if abs(s) >= w:
            comp += (s - t) + w
        else:
            comp += (w - t) + s
        s = t
        if want_marginals:
            for l in range(n):
                sy[l] += w * y[l]
    total = s + comp
    return top + np.log(total), sy / total


@numba.njit(cache=True)
def _gray_quadratic(J):
    """Table of ½ yᵀJy indexed by bit pattern."""
    n = J.shape[0]
    out = np.empty(1 << n)
    y = -np.ones(n)
    f = J @ y
    e = 0.0
    for i in range(n):
        e += 0.5 * y[i] * f[i]
    out[0] = e
    gray = 0
    for k in range(1, 1 << n):
        j = 0
        while not (k >> j) & 1:
            j += 1
        e -= 2.0 * y[j] * f[j]
        delta = -2.0 * y[j]
        row = J[j]
        for l in range(n):
            f[l] += row[l] * delta
        y[j] = -y[j]
        gray ^= 1 << j
        out[gray] = e
    return out


def _prepare(A, limit: OracleLimit, treatment: bool = False) -> np.ndarray:
    A = np.ascontiguousarray(as_array(A))
    n = A.shape[0]
    limit.check(n, treatment)
    if np.any(np.diag(A) != 0.0):
        raise ValueError("interaction matrix must have a zero diagonal")
    return A


def exact_log_partition(A, t, x, p: OutcomeParams, limit: OracleLimit = OracleLimit()) -> float:
    """``log Σ_y exp(hamiltonian(y, t, x, A, p))`` by exhaustive enumeration."""
    A = _prepare(A, limit)
    h = external_field(t, x, p, A.shape[0])
    return float(_gray_stream(A, h, False)[0])


def exact_marginals(A, t, x, p: OutcomeParams, limit: OracleLimit = OracleLimit()) -> np.ndarray:
    """Exact ``⟨Y_i⟩`` for every unit."""
    A = _prepare(A, limit)
    h = external_field(t, x, p, A.shape[0])
    return np.clip(_gray_stream(A, h, True)[1], -1.0, 1.0)


def quadratic_energy_table(A, limit: OracleLimit = OracleLimit()) -> np.ndarray:
    """``½ yᵀAy`` for all ``2^n`` states (bit ``i`` set means ``y_i = +1``)."""
    return _gray_quadratic(_prepare(A, limit))


def _kernels(tau: float, c: np.ndarray):
    """Per-unit 2x2 kernels ``exp((τ t + c_i) y)`` indexed [unit, t, y], rescaled to max 1."""
    tt = np.array([-1.0, 1.0])
    a = tau * tt[None, :, None] + c[:, None, None]
    expo = a * tt[None, None, :]
    shift = np.max(expo, axis=(1, 2))
    K = np.exp(expo - shift[:, None, None])
    return K, shift


def treatment_transform(table: np.ndarray, tau: float, c: np.ndarray):
    """Partition functions over all treatment vectors.

    Returns ``(logF, mean_ty, mean_y)`` arrays indexed by treatment bit pattern
    where ``logF[t] = log Σ_y exp(table[y] + Σ_i (τ t_i + c_i) y_i)``,
    ``mean_ty[t] = ⟨t·y⟩`` and ``mean_y[t] = ⟨Σ_i y_i⟩``.
    """
    n = c.shape[0]
    top = float(np.max(table))
    v = np.exp(table - top)
    dt = np.zeros_like(v)
    dg = np.zeros_like(v)
    K, shift = _kernels(tau, c)
    pm = np.array([-1.0, 1.0])
    for i in range(n):
        shape = (1 << (n - 1 - i), 2, 1 << i)
        v3, dt3, dg3 = v.reshape(shape), dt.reshape(shape), dg.reshape(shape)
        Ki = K[i]
        nv = np.einsum("ty,ayb->atb", Ki, v3)
        yv = v3 * pm[None, :, None]
        ndt = np.einsum("ty,ayb->atb", Ki, dt3) + pm[None, :, None] * np.einsum("ty,ayb->atb", Ki, yv)
        ndg = np.einsum("ty,ayb->atb", Ki, dg3 + yv)
        v, dt, dg = nv.reshape(-1), ndt.reshape(-1), ndg.reshape(-1)
    logF = np.log(v) + top + shift.sum()
    return logF, dt / v, dg / v


def treatment_contract(table: np.ndarray, tau: float, c: np.ndarray, t: np.ndarray):
    """Single-treatment version of :func:`treatment_transform`: ``(logZ, ⟨t·y⟩, ⟨Σy⟩)``."""
    n = c.shape[0]
    top = float(np.max(table))
    v = np.exp(table - top)
    dt = np.zeros_like(v)
    dg = np.zeros_like(v)
    K, shift = _kernels(tau, c)
    pm = np.array([-1.0, 1.0])
    for i in range(n - 1, -1, -1):
        # unit i is the most significant remaining bit
        v2, dt2, dg2 = v.reshape(2, -1), dt.reshape(2, -1), dg.reshape(2, -1)
        ti = 1 if t[i] > 0 else 0
        row = K[i, ti]
        yv = v2 * pm[:, None]
        v = row @ v2
        dt = row @ dt2 + t[i] * (row @ yv)
        dg = row @ (dg2 + yv)
    return float(np.log(v[0]) + top + shift.sum()), float(dt[0] / v[0]), float(dg[0] / v[0])


def _bits_to_spins(n: int) -> np.ndarray:
    return ((np.arange(1 << n)[:, None] >> np.arange(n)) & 1) * 2.0 - 1.0


def _effects_given_x(table, p: OutcomeParams, cov: np.ndarray, n: int):
    """Full treatment enumeration at fixed covariate term ``cov``: (DE, IE)."""
    c = cov + p.gamma
    _, ty, y = treatment_transform(table, p.tau, c)
    de = 2.0 / n * float(np.mean(ty))
    ie = float(np.mean(y)) / n - float(y[0]) / n - 0.5 * de
    return de, ie


def exact_effects(A, x_dist: CovariateDistribution | None, p: OutcomeParams,
                  mode: str = "full", k: int = 1000, seed: int | None = None,
                  limit: OracleLimit = OracleLimit(), table: np.ndarray | None = None) -> EffectEstimate:
    """Exact DE and IE, with the outer expectation enumerated or sampled.

    ``mode="full"`` averages over every treatment vector and, for finite
    covariate laws with at most ``limit.max_covariate_states`` joint
    configurations, every covariate configuration. Larger covariate spaces
    fall back to ``limit.covariate_draws`` sampled configurations (recorded
    in ``meta``). ``mode="monte_carlo"`` averages ``k`` sampled replicates.
    """
    start = time.perf_counter()
    A = as_array(A)
    n = A.shape[0]
    if x_dist is None:
        x_dist = CovariateDistribution("none")
    if p.d and x_dist.d != p.d:
        raise ValueError(f"theta has length {p.d} but covariates have dimension {x_dist.d}")
    if table is None:
        table = quadratic_energy_table(A, limit)
    meta: dict = {"mode": mode}
    if mode == "full":
        limit.check(n, treatment=True)
        if p.d == 0 or x_dist.kind == "none":
            de, ie = _effects_given_x(table, p, np.zeros(n), n)
            est = EffectEstimate(de, ie, 0.0, 0.0, "oracle", n, [], meta=meta)
        elif x_dist.is_finite and x_dist.support.shape[0] ** n <= limit.max_covariate_states:
            levels = x_dist.support @ p.theta
            logp = np.log(x_dist.probs)
            de = ie = 0.0
            for combo in itertools.product(range(levels.size), repeat=n):
                idx = np.asarray(combo)
                w = float(np.exp(logp[idx].sum()))
                d1, i1 = _effects_given_x(table, p, levels[idx], n)
                de += w * d1
                ie += w * i1
            meta["covariates"] = "enumerated"
            est = EffectEstimate(de, ie, 0.0, 0.0, "oracle", n, [], meta=meta)
        else:
            if seed is None:
                raise ValueError("covariate fallback needs a seed")
            seeds = split_seeds(seed, limit.covariate_draws)
            vals = np.array([_effects_given_x(table, p, covariate_term(
                x_dist.sample(n, make_rng(s)), p.theta, n), n) for s in seeds])
            meta["covariates"] = "monte_carlo"
            se = vals.std(axis=0, ddof=1) / np.sqrt(len(seeds))
            est = EffectEstimate(float(vals[:, 0].mean()), float(vals[:, 1].mean()),
                                 float(se[0]), float(se[1]), "oracle", n, seeds, meta=meta)
    elif mode == "monte_carlo":
        if k < 1:
            raise ValueError("monte_carlo mode needs k >= 1")
        if seed is None:
            raise ValueError("monte_carlo mode needs a seed")
        seeds = split_seeds(seed, k)
        vals = np.empty((k, 2))
        minus = -np.ones(n)
        for j, s in enumerate(seeds):
            draw = draw_replicate(n, x_dist, s)
            c = covariate_term(draw.x_bar, p.theta, n) + p.gamma
            _, ty, y = treatment_contract(table, p.tau, c, draw.t_bar)
            _, _, y_minus = treatment_contract(table, p.tau, c, minus)
            de = 2.0 * ty / n
            vals[j] = de, (y - y_minus) / n - 0.5 * de
        se = vals.std(axis=0, ddof=1) / np.sqrt(k) if k > 1 else np.full(2, np.inf)
        est = EffectEstimate(float(vals[:, 0].mean()), float(vals[:, 1].mean()),
                             float(se[0]), float(se[1]), "oracle", n, seeds, meta=meta)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    est.runtime = time.perf_counter() - start
    return est


def exact_direct_effect(A, x_dist, p, mode="full", k=1000, seed=None,
                        limit: OracleLimit = OracleLimit()) -> EffectEstimate:
    """Exact DE (the returned record also carries IE, computed alongside)."""
    return exact_effects(A, x_dist, p, mode, k, seed, limit)


def exact_indirect_effect(A, x_dist, p, mode="full", k=1000, seed=None,
                          limit: OracleLimit = OracleLimit()) -> EffectEstimate:
    """Exact IE (the returned record also carries DE, which IE depends on)."""
    return exact_effects(A, x_dist, p, mode, k, seed, limit)


def unit_effects(i: int, t_minus_i, A, x, p: OutcomeParams,
                 limit: OracleLimit = OracleLimit()) -> tuple[float, float]:
    """Unit-level direct and spillover effects at fixed covariates.

    ``t_minus_i`` holds the other ``n - 1`` treatments in unit order.
    """
    A = as_array(A)
    n = A.shape[0]
    if not 0 <= i < n:
        raise IndexError(f"unit index {i} out of range for n={n}")
    rest = np.asarray(t_minus_i, dtype=float)
    if rest.shape != (n - 1,):
        raise ValueError(f"t_minus_i must have length {n - 1}")
    t_plus = np.insert(rest, i, 1.0)
    t_minus = np.insert(rest, i, -1.0)
    y_plus = exact_marginals(A, t_plus, x, p, limit)[i]
    y_minus = exact_marginals(A, t_minus, x, p, limit)[i]
    y_all = exact_marginals(A, -np.ones(n), x, p, limit)[i]
    return float(y_plus - y_minus), float(y_minus - y_all)


def enumerate_states(n: int) -> np.ndarray:
    """All spin configurations, row ``s`` matching bit pattern ``s``."""
    return _bits_to_spins(n)
