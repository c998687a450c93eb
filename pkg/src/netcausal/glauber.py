"""Heat-bath Glauber dynamics for Ising-type measures and mixing diagnostics."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numba
import numpy as np

from .model import (CovariateDistribution, EffectEstimate, OutcomeParams, as_array, draw_replicate,
                    external_field)
from .parallel import map_ordered
from .rng import make_rng, split_seeds

_CHUNK = 1 << 20


@numba.njit(cache=True)
def _sweep_kernel(y, J, h, f, orders, uniforms, mags, energies, acc,
                  first_sweep, burn_in, thin):
    n = y.shape[0]
    count = 0
    for s in range(orders.shape[0]):
        for r in range(n):
            i = orders[s, r]
            m = f[i] + h[i]
            p_plus = 1.0 / (1.0 + np.exp(-2.0 * m))
            new = 1.0 if uniforms[s, r] < p_plus else -1.0
            if new != y[i]:
                delta = new - y[i]
                row = J[i]
                for j in range(n):
                    f[j] += row[j] * delta
                y[i] = new
        mag = 0.0
        en = 0.0
        for j in range(n):
            mag += y[j]
            en += y[j] * (0.5 * f[j] + h[j])
        mags[s] = mag / n
        energies[s] = en
        g = first_sweep + s
        if g >= burn_in and (g - burn_in) % thin == 0:
            for j in range(n):
                acc[j] += y[j]
            count += 1
    return count


def _run(y, J, h, sweeps, rng, systematic=False, burn_in=0, thin=1):
    """Run ``sweeps`` sweeps in place; return (mags, energies, acc, count)."""
    n = y.shape[0]
    J = np.ascontiguousarray(J, dtype=float)
    h = np.ascontiguousarray(h, dtype=float)
    f = J @ y
    mags = np.empty(sweeps)
    energies = np.empty(sweeps)
    acc = np.zeros(n)
    count = 0
    per_chunk = max(1, _CHUNK // max(n, 1))
    done = 0
    base = np.arange(n, dtype=np.int64)
    while done < sweeps:
        s = min(per_chunk, sweeps - done)
        if systematic:
            orders = np.broadcast_to(base, (s, n)).copy()
        else:
            orders = rng.permuted(np.broadcast_to(base, (s, n)), axis=1)
        uniforms = rng.random((s, n))
        count += _sweep_kernel(y, J, h, f, orders, uniforms, mags[done:done + s],
                               energies[done:done + s], acc, done, burn_in, thin)
        done += s
    return mags, energies, acc, count


def sweep_fields(y, J, h, sweeps: int, rng: np.random.Generator, systematic: bool = False) -> np.ndarray:
    """Apply ``sweeps`` heat-bath sweeps to a copy of ``y`` under couplings ``J`` and field ``h``."""
    y = np.array(y, dtype=float)
    _run(y, as_array(J), h, sweeps, rng, systematic)
    return y


def glauber_sweep(y, t, x, A, p: OutcomeParams, seed: int) -> np.ndarray:
    """One random-scan sweep of the outcome chain."""
    A = as_array(A)
    h = external_field(t, x, p, A.shape[0])
    return sweep_fields(y, A, h, 1, make_rng(seed))


def sample_outcomes(A, t, x, p: OutcomeParams, sweeps: int, seed: int) -> np.ndarray:
    """Approximate outcome draw: ``sweeps`` sweeps from a uniformly random start."""
    A = as_array(A)
    n = A.shape[0]
    rng = make_rng(seed)
    y0 = rng.choice(np.array([-1.0, 1.0]), size=n)
    return sweep_fields(y0, A, external_field(t, x, p, n), sweeps, rng)


@dataclass(frozen=True)
class ChainConfig:
    sweeps: int
    burn_in: int = 0
    thin: int = 1
    init: str = "random"
    seed: int = 0
    systematic: bool = False

    def __post_init__(self):
        if not self.sweeps > self.burn_in >= 0:
            raise ValueError("need sweeps > burn_in >= 0")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if self.init not in ("all_plus", "all_minus", "random"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class ChainResult:
    marginals: np.ndarray
    magnetization: np.ndarray
    energy: np.ndarray
    n_samples: int
    seed: int

    @property
    def mean_magnetization(self) -> float:
        return float(self.marginals.mean())


def run_chain(cfg: ChainConfig, t, x, A, p: OutcomeParams) -> ChainResult:
    """Run one chain and return post-burn-in, thinned time averages of each spin."""
    A = as_array(A)
    n = A.shape[0]
    h = external_field(t, x, p, n)
    rng = make_rng(cfg.seed)
    if cfg.init == "all_plus":
        y = np.ones(n)
    elif cfg.init == "all_minus":
        y = -np.ones(n)
    else:
        y = rng.choice(np.array([-1.0, 1.0]), size=n)
    mags, energies, acc, count = _run(y, A, h, cfg.sweeps, rng, cfg.systematic,
                                      cfg.burn_in, cfg.thin)
    return ChainResult(acc / count, mags, energies, count, cfg.seed)


def metastability_gap(A, t, x, p: OutcomeParams, cfg: ChainConfig) -> float:
    """Gap between mean magnetizations of chains started all-plus and all-minus."""
    s_plus, s_minus = split_seeds(cfg.seed, 2)
    plus = run_chain(ChainConfig(cfg.sweeps, cfg.burn_in, cfg.thin, "all_plus", s_plus,
                                 cfg.systematic), t, x, A, p)
    minus = run_chain(ChainConfig(cfg.sweeps, cfg.burn_in, cfg.thin, "all_minus", s_minus,
                                  cfg.systematic), t, x, A, p)
    return abs(plus.mean_magnetization - minus.mean_magnetization)


def glauber_effects(A, x_dist: CovariateDistribution | None, p: OutcomeParams, chain: ChainConfig,
                    k_replicates: int, seed: int, workers: int | None = None) -> EffectEstimate:
    """DE and IE with chain time averages standing in for exact marginals.

    Each replicate draws ``(T̄, X̄)`` and runs one chain at ``T̄`` and one at ``T = −1``.
    """
    start = time.perf_counter()
    A = as_array(A)
    n = A.shape[0]
    x_dist = x_dist or CovariateDistribution("none")
    seeds = split_seeds(seed, k_replicates)

    def one(s):
        draw = draw_replicate(n, x_dist, s)
        s_t, s_m = split_seeds(s, 2)
        cfg_t = ChainConfig(chain.sweeps, chain.burn_in, chain.thin, chain.init, s_t, chain.systematic)
        cfg_m = ChainConfig(chain.sweeps, chain.burn_in, chain.thin, chain.init, s_m, chain.systematic)
        mt = run_chain(cfg_t, draw.t_bar, draw.x_bar, A, p).marginals
        mm = run_chain(cfg_m, -np.ones(n), draw.x_bar, A, p).marginals
        de = 2.0 * float(draw.t_bar @ mt) / n
        return de, float(mt.mean() - mm.mean()) - de / 2

    vals = np.array(map_ordered(one, seeds, workers))
    se = vals.std(axis=0, ddof=1) / np.sqrt(k_replicates) if k_replicates > 1 else np.full(2, np.inf)
    return EffectEstimate(float(vals[:, 0].mean()), float(vals[:, 1].mean()), float(se[0]),
                          float(se[1]), "glauber", n, seeds, time.perf_counter() - start,
                          {"sweeps": chain.sweeps, "burn_in": chain.burn_in, "thin": chain.thin})


def write_trace_csv(result: ChainResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sweep", "magnetization", "energy"])
        for k, (m, e) in enumerate(zip(result.magnetization, result.energy), start=1):
            w.writerow([k, repr(float(m)), repr(float(e))])


def heat_bath_kernel(J, h) -> np.ndarray:
    """Transition matrix of one random-site heat-bath update (small n only).

    States are indexed by bit patterns, bit ``i`` set meaning spin ``i`` is +1.
    """
    J = as_array(J)
    h = np.asarray(h, dtype=float)
    n = J.shape[0]
    if n > 10:
        raise ValueError("heat_bath_kernel is for n <= 10")
    N = 1 << n
    states = ((np.arange(N)[:, None] >> np.arange(n)) & 1) * 2.0 - 1.0
    P = np.zeros((N, N))
    for s in range(N):
        y = states[s]
        for i in range(n):
            m = J[i] @ y - J[i, i] * y[i] + h[i]
            p_plus = 1.0 / (1.0 + np.exp(-2.0 * m))
            up, down = s | (1 << i), s & ~(1 << i)
            P[s, up] += p_plus / n
            P[s, down] += (1.0 - p_plus) / n
    return P
