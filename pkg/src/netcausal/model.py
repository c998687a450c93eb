"""Outcome and propensity Gibbs measures, local fields, and synthetic generators.

The outcome law given treatments ``t`` and covariates ``x`` is

    P(y | t, x) ∝ exp(½ yᵀAy + Σ_i y_i (τ t_i + θᵀx_i + γ)),

with ``A`` symmetric and zero on the diagonal. Treatments follow an Ising law
with couplings ``M`` and covariate fields ``x_iᵀγ0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .rng import make_rng

DEFAULT_TAU_BOUND = 5.0
DEFAULT_THETA_BOUND = 5.0


class DimensionError(ValueError):
    """Raised when array shapes disagree; ``dimension`` names the culprit."""

    def __init__(self, dimension: str, expected: Any, got: Any):
        self.dimension = dimension
        self.expected = expected
        self.got = got
        super().__init__(f"dimension mismatch in {dimension}: expected {expected}, got {got}")


def as_array(A) -> np.ndarray:
    """Return the dense coupling array behind ``A`` (array or InteractionMatrix)."""
    return np.asarray(getattr(A, "entries", A), dtype=float)


def check_interaction(entries: np.ndarray, dense: bool = False, atol: float = 1e-12) -> None:
    """Validate symmetry, zero diagonal and (optionally) the dense scaling bound."""
    if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
        raise DimensionError("interaction", "square matrix", entries.shape)
    if not np.allclose(entries, entries.T, atol=atol, rtol=0.0):
        raise ValueError("interaction matrix is not symmetric")
    if np.any(np.diag(entries) != 0.0):
        raise ValueError("interaction matrix must have a zero diagonal")
    n = entries.shape[0]
    if dense and n > 0 and np.max(np.abs(n * entries)) > 1.0 + 1e-12:
        raise ValueError("dense scaling violated: max |n A_ij| exceeds 1")


@dataclass(frozen=True)
class InteractionMatrix:
    """Symmetric, zero-diagonal coupling matrix with provenance."""

    entries: np.ndarray
    kind: str = "custom"
    params: dict = field(default_factory=dict)
    seed: int | None = None

    def __post_init__(self):
        arr = np.array(self.entries, dtype=float)
        check_interaction(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def is_dense_scaled(self) -> bool:
        return self.n == 0 or float(np.max(np.abs(self.n * self.entries))) <= 1.0 + 1e-12


@dataclass(frozen=True)
class OutcomeParams:
    """Treatment coefficient ``tau``, covariate coefficients ``theta`` and tilt ``gamma``."""

    tau: float
    theta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gamma: float = 0.0

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float)).ravel()
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def d(self) -> int:
        return self.theta.size

    def check_bounds(self, tau_bound: float = DEFAULT_TAU_BOUND,
                     theta_bound: float = DEFAULT_THETA_BOUND) -> None:
        if abs(self.tau) > tau_bound:
            raise ValueError(f"|tau| = {abs(self.tau)} exceeds bound {tau_bound}")
        if self.d and np.max(np.abs(self.theta)) > theta_bound:
            raise ValueError(f"theta exceeds bound {theta_bound}")

    def replace(self, **changes) -> "OutcomeParams":
        vals = {"tau": self.tau, "theta": self.theta, "gamma": self.gamma}
        vals.update(changes)
        return OutcomeParams(**vals)


@dataclass(frozen=True)
class PropensityParams:
    """Treatment couplings ``M`` and covariate coefficients ``gamma0``."""

    M: np.ndarray
    gamma0: np.ndarray = field(default_factory=lambda: np.zeros(0))
    norm_bound: float | None = None

    def __post_init__(self):
        M = np.array(self.M, dtype=float)
        check_interaction(M)
        M.setflags(write=False)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "gamma0", np.atleast_1d(np.asarray(self.gamma0, dtype=float)).ravel())
        if self.norm_bound is not None and M.size:
            if np.linalg.norm(M, 2) > self.norm_bound:
                raise ValueError("propensity coupling norm exceeds configured bound")


@dataclass(frozen=True)
class CovariateMatrix:
    """Covariate rows in [-1, 1]^d, optionally tied to a finite support.

    When ``support`` is given, ``levels[i]`` is the index of row ``i`` in it.
    """

    values: np.ndarray
    support: np.ndarray | None = None
    levels: np.ndarray | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.size and (np.max(vals) > 1.0 + 1e-12 or np.min(vals) < -1.0 - 1e-12):
            raise ValueError("covariates must lie in [-1, 1]")
        object.__setattr__(self, "values", vals)
        if self.support is not None:
            sup = np.asarray(self.support, dtype=float)
            sup = sup.reshape(-1, vals.shape[1]) if vals.shape[1] else sup.reshape(max(len(sup), 1), 0)
            object.__setattr__(self, "support", sup)
            if self.levels is None:
                levels = _match_levels(vals, sup)
            else:
                levels = np.asarray(self.levels, dtype=np.int64)
                if levels.shape != (vals.shape[0],):
                    raise DimensionError("levels", (vals.shape[0],), levels.shape)
                if not np.allclose(sup[levels], vals):
                    raise ValueError("covariate rows disagree with their support levels")
            object.__setattr__(self, "levels", levels)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def is_finite(self) -> bool:
        return self.support is not None


def _match_levels(vals: np.ndarray, support: np.ndarray) -> np.ndarray:
    dist = np.abs(vals[:, None, :] - support[None, :, :]).max(axis=2)
    idx = np.argmin(dist, axis=1)
    if vals.shape[0] and np.max(dist[np.arange(vals.shape[0]), idx]) > 1e-12:
        raise ValueError("covariate row outside the declared support")
    return idx.astype(np.int64)


@dataclass(frozen=True)
class CovariateDistribution:
    """Law of a single covariate row.

    ``kind`` is one of ``none``, ``uniform_grid``, ``rademacher_d``,
    ``custom_finite`` or ``uniform_box`` (continuous, needs discretization
    before block estimation).
    """

    kind: str = "none"
    d: int = 0
    support: np.ndarray | None = None
    probs: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "none":
            object.__setattr__(self, "d", 0)
            object.__setattr__(self, "support", np.zeros((1, 0)))
            object.__setattr__(self, "probs", np.ones(1))
        elif self.kind in ("uniform_grid", "rademacher_d", "custom_finite"):
            sup = np.asarray(self.support, dtype=float)
            if sup.ndim == 1:
                sup = sup[:, None]
            probs = np.asarray(self.probs, dtype=float)
            if probs.shape != (sup.shape[0],) or np.any(probs < 0):
                raise ValueError("probabilities must be non-negative, one per support point")
            if abs(probs.sum() - 1.0) > 1e-9:
                raise ValueError("probabilities must sum to 1")
            if np.max(np.abs(sup)) > 1.0 + 1e-12:
                raise ValueError("support points must lie in [-1, 1]^d")
            object.__setattr__(self, "support", sup)
            object.__setattr__(self, "probs", probs / probs.sum())
            object.__setattr__(self, "d", sup.shape[1])
        elif self.kind == "uniform_box":
            if self.d < 1:
                raise ValueError("uniform_box needs d >= 1")
        else:
            raise ValueError(f"unknown covariate distribution {self.kind!r}")

    @property
    def is_finite(self) -> bool:
        return self.kind != "uniform_box"

    def sample(self, n: int, rng: np.random.Generator) -> CovariateMatrix:
        if self.kind == "none":
            return CovariateMatrix(np.zeros((n, 0)), support=np.zeros((1, 0)),
                                   levels=np.zeros(n, dtype=np.int64))
        if self.kind == "uniform_box":
            return CovariateMatrix(rng.uniform(-1.0, 1.0, size=(n, self.d)))
        levels = rng.choice(self.support.shape[0], size=n, p=self.probs)
        return CovariateMatrix(self.support[levels], support=self.support, levels=levels)


def covariate_distribution(kind: str, d: int = 1, levels: int = 2, support=None,
                           probs=None) -> CovariateDistribution:
    """Build a covariate law.

    ``uniform_grid`` places ``levels`` equally spaced points on [-1, 1] in each
    coordinate and weights the product grid uniformly.
    """
    if kind == "none":
        return CovariateDistribution("none")
    if kind == "uniform_grid":
        if levels < 1 or d < 1:
            raise ValueError("uniform_grid needs d >= 1 and levels >= 1")
        axis = np.linspace(-1.0, 1.0, levels) if levels > 1 else np.zeros(1)
        grid = np.array(np.meshgrid(*([axis] * d), indexing="ij")).reshape(d, -1).T
        return CovariateDistribution(kind, d, grid, np.full(grid.shape[0], 1.0 / grid.shape[0]))
    if kind == "rademacher_d":
        grid = covariate_distribution("uniform_grid", d=d, levels=2).support
        return CovariateDistribution(kind, d, grid, np.full(grid.shape[0], 1.0 / grid.shape[0]))
    if kind == "custom_finite":
        if support is None or probs is None:
            raise ValueError("custom_finite needs support and probs")
        return CovariateDistribution(kind, 0, support, probs)
    if kind == "uniform_box":
        return CovariateDistribution(kind, d)
    raise ValueError(f"unknown covariate distribution {kind!r}")


def sample_covariates(dist: CovariateDistribution, n: int, seed: int) -> CovariateMatrix:
    """Draw ``n`` i.i.d. covariate rows from ``dist``."""
    return dist.sample(n, make_rng(seed))


@dataclass(frozen=True)
class ReplicateDraw:
    """One hypothetical (treatment, covariate) allocation."""

    t_bar: np.ndarray
    x_bar: CovariateMatrix
    seed: int

    def __post_init__(self):
        t = np.asarray(self.t_bar, dtype=float)
        if not np.all(np.abs(t) == 1.0):
            raise ValueError("t_bar entries must be exactly +/-1")
        object.__setattr__(self, "t_bar", t)


def draw_replicate(n: int, x_dist: CovariateDistribution, seed: int) -> ReplicateDraw:
    """Uniform ±1 treatments plus i.i.d. covariates, all from one seed."""
    rng = make_rng(seed)
    t = rng.choice(np.array([-1.0, 1.0]), size=n)
    x = x_dist.sample(n, rng)
    return ReplicateDraw(t, x, seed)


@dataclass
class EffectEstimate:
    """Direct and indirect effect estimates with replicate standard errors."""

    de: float
    ie: float
    se_de: float = 0.0
    se_ie: float = 0.0
    method: str = ""
    n: int = 0
    seeds: list = field(default_factory=list)
    runtime: float = 0.0
    meta: dict = field(default_factory=dict)


def covariate_term(x, theta: np.ndarray, n: int) -> np.ndarray:
    """Return the vector ``x_iᵀθ`` (zeros when there are no covariates)."""
    if theta.size == 0:
        return np.zeros(n)
    if x is None:
        raise DimensionError("covariates", f"n x {theta.size}", None)
    vals = np.asarray(getattr(x, "values", x), dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    if vals.shape != (n, theta.size):
        raise DimensionError("covariates", (n, theta.size), vals.shape)
    return vals @ theta


def external_field(t, x, p: OutcomeParams, n: int | None = None) -> np.ndarray:
    """Per-unit field ``τ t_i + θᵀx_i + γ``."""
    t = np.asarray(t, dtype=float)
    if n is None:
        n = t.shape[0]
    if t.shape != (n,):
        raise DimensionError("treatments", (n,), t.shape)
    return p.tau * t + covariate_term(x, p.theta, n) + p.gamma


def hamiltonian(y, t, x, A, p: OutcomeParams) -> float:
    """Energy ``½ yᵀAy + Σ_i y_i (τ t_i + θᵀx_i + γ)``."""
    A = as_array(A)
    y = np.asarray(y, dtype=float)
    n = A.shape[0]
    if y.shape != (n,):
        raise DimensionError("outcomes", (n,), y.shape)
    h = external_field(t, x, p, n)
    return float(0.5 * y @ A @ y + y @ h)


def conditional_field(i: int, y, t, x, A, p: OutcomeParams) -> float:
    """Local field ``m_i`` with ``P(y_i = s | y_-i) = exp(s m_i) / (2 cosh m_i)``."""
    A = as_array(A)
    n = A.shape[0]
    if not 0 <= i < n:
        raise IndexError(f"unit index {i} out of range for n={n}")
    y = np.asarray(y, dtype=float)
    if y.shape != (n,):
        raise DimensionError("outcomes", (n,), y.shape)
    t = np.asarray(t, dtype=float)
    if t.shape != (n,):
        raise DimensionError("treatments", (n,), t.shape)
    xi = covariate_term(x, p.theta, n)[i] if p.d else 0.0
    return float(A[i] @ y - A[i, i] * y[i] + p.tau * t[i] + xi + p.gamma)


def _symmetric_zero_diag(upper: np.ndarray) -> np.ndarray:
    tri = np.triu(upper, 1)
    return tri + tri.T


def make_interaction(kind: str, n: int, seed: int | None = None, **params) -> InteractionMatrix:
    """Generate a coupling matrix.

    Kinds and their parameters:

    * ``zero``
    * ``curie_weiss``: ``beta``; entries ``beta / n`` off the diagonal.
    * ``block_model``: ``alpha`` (within), ``beta`` (across), ``sizes`` or
      ``fraction`` of units in the first of two blocks; entries ``/ n``.
    * ``erdos_renyi``: ``p`` edge probability, ``scale`` (default 1); entries
      ``scale / n`` on edges.
    * ``regular_graph``: ``degree`` (even), ``scale``; circulant ring joining
      each unit to its ``degree / 2`` nearest neighbours on either side.
    * ``gaussian``: ``beta``; ``beta * G`` with ``G_ij ~ N(0, 1/n)``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    used = {"n": n, **params}
    if kind == "zero":
        A = np.zeros((n, n))
    elif kind == "curie_weiss":
        beta = float(params.get("beta", 1.0))
        if beta < 0:
            raise ValueError("beta must be non-negative")
        A = np.full((n, n), beta / n)
        np.fill_diagonal(A, 0.0)
    elif kind == "block_model":
        alpha, beta = float(params["alpha"]), float(params["beta"])
        if "sizes" in params:
            sizes = [int(s) for s in params["sizes"]]
        else:
            first = int(round(n * float(params.get("fraction", 0.5))))
            sizes = [first, n - first]
        if sum(sizes) != n or min(sizes) < 0:
            raise ValueError("block sizes must be non-negative and sum to n")
        labels = np.repeat(np.arange(len(sizes)), sizes)
        same = labels[:, None] == labels[None, :]
        A = np.where(same, alpha, beta) / n
        np.fill_diagonal(A, 0.0)
    elif kind == "erdos_renyi":
        prob = float(params.get("p", 0.5))
        if not 0.0 <= prob <= 1.0:
            raise ValueError("edge probability must lie in [0, 1]")
        scale = float(params.get("scale", 1.0))
        if seed is None:
            raise ValueError("erdos_renyi needs a seed")
        edges = make_rng(seed).random((n, n)) < prob
        A = _symmetric_zero_diag(edges.astype(float)) * scale / n
    elif kind == "regular_graph":
        degree = int(params.get("degree", 2))
        if degree < 0 or degree % 2 or degree >= n:
            raise ValueError("degree must be even and smaller than n")
        scale = float(params.get("scale", 1.0))
        idx = np.arange(n)
        gap = np.abs(idx[:, None] - idx[None, :])
        ring = np.minimum(gap, n - gap)
        A = ((ring >= 1) & (ring <= degree // 2)).astype(float) * scale / n
    elif kind == "gaussian":
        beta = float(params.get("beta", 1.0))
        if beta < 0:
            raise ValueError("beta must be non-negative")
        if seed is None:
            raise ValueError("gaussian needs a seed")
        G = make_rng(seed).standard_normal((n, n)) / np.sqrt(n)
        A = beta * _symmetric_zero_diag(G)
    else:
        raise ValueError(f"unknown interaction kind {kind!r}")
    return InteractionMatrix(A, kind=kind, params=used, seed=seed)


def sample_treatments(prop: PropensityParams, x, glauber_steps: int, seed: int) -> np.ndarray:
    """Draw treatments from the propensity Ising law.

    With zero couplings the draw is exact; otherwise ``ceil(steps / n)``
    heat-bath sweeps are run from a uniform random start.
    """
    M = prop.M
    n = M.shape[0]
    if glauber_steps < n:
        raise ValueError("glauber_steps must be at least n (one sweep)")
    h = covariate_term(x, prop.gamma0, n)
    rng = make_rng(seed)
    if not np.any(M):
        return np.where(rng.random(n) < 0.5 * (1.0 + np.tanh(h)), 1.0, -1.0)
    from .glauber import sweep_fields

    t = rng.choice(np.array([-1.0, 1.0]), size=n)
    sweeps = -(-glauber_steps // n)
    return sweep_fields(t, M, h, sweeps, rng)
