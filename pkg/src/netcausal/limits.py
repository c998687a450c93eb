"""Large-field free-energy constructions and block-graphon mean-field limits."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import xlogy

from .model import as_array
from .parisi import log2cosh
from .rng import make_rng


def rate_function(m):
    """Entropy cost ``I(m)`` of magnetization ``m`` for the fair ±1 base measure."""
    m = np.asarray(m, dtype=float)
    if np.any(np.abs(m) > 1):
        raise ValueError("magnetization must lie in [-1, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        val = 0.5 * (xlogy(1 + m, 1 + m) + xlogy(1 - m, 1 - m))
        small = 0.5 * ((1 + m) * np.log1p(m) + (1 - m) * np.log1p(-m))
    # log1p avoids cancellation near 0; the endpoints need xlogy's 0·log 0 = 0
    return np.maximum(np.where(np.abs(m) < 0.5, small, val), 0.0)


def phi_tau(A, t, tau: float) -> float:
    """``(1/2n) tᵀAt + (1/n) Σ log 2cosh(τ t_i)``."""
    A = as_array(A)
    t = np.asarray(t, dtype=float)
    n = t.size
    return float(0.5 * t @ A @ t / n + np.mean(log2cosh(tau * t)))


@dataclass
class PsiResult:
    value: float
    anchor: float
    integral: float
    coarse: bool
    max_jump: float


def psi_reconstruct(A, tau_grid, de_estimates, step_tol: float = 0.1) -> PsiResult:
    """Recover ``(1/n) log Z(0)`` from DE values along a τ grid.

    Uses ``E_T[φ(τ_max)] − ½ ∫ DE``; for uniform ±1 treatments the expectation
    is exact: ``tr(A)/(2n) + log 2cosh τ_max``.
    """
    A = as_array(A)
    tau_grid = np.asarray(tau_grid, dtype=float)
    de = np.asarray(de_estimates, dtype=float)
    if tau_grid.ndim != 1 or tau_grid.size < 2 or de.shape != tau_grid.shape:
        raise ValueError("tau_grid and de_estimates must be aligned 1-d arrays of length >= 2")
    if tau_grid[0] != 0 or np.any(np.diff(tau_grid) <= 0):
        raise ValueError("tau_grid must increase from 0")
    n = A.shape[0]
    anchor = float(np.trace(A) / (2 * n) + log2cosh(tau_grid[-1]))
    integral = float(trapezoid(de, tau_grid))
    jump = float(np.max(np.abs(np.diff(de))))
    return PsiResult(anchor - 0.5 * integral, anchor, integral, jump > step_tol, jump)


@dataclass(frozen=True)
class BlockGraphon:
    """Block-constant limit coupling ``W`` with block weights ``p``."""

    W: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if W.shape != (p.size, p.size):
            raise ValueError(f"W has shape {W.shape} but there are {p.size} blocks")
        if not np.allclose(W, W.T, atol=1e-12):
            raise ValueError("W must be symmetric")
        if np.any(p <= 0) or abs(p.sum() - 1) > 1e-12:
            raise ValueError("block weights must be positive and sum to 1")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "p", p)

    @classmethod
    def constant(cls, beta: float) -> "BlockGraphon":
        return cls(np.array([[beta]]), np.array([1.0]))

    @property
    def B(self) -> int:
        return self.p.size

    def digest(self) -> str:
        raw = np.concatenate([self.W.ravel(), self.p]).tobytes()
        return hashlib.sha1(raw).hexdigest()[:12]


@dataclass(frozen=True)
class FieldLevels:
    """Finite law of covariate fields ``θᵀx`` (a single zero level by default)."""

    values: np.ndarray = field(default_factory=lambda: np.zeros(1))
    probs: np.ndarray = field(default_factory=lambda: np.ones(1))

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.values, dtype=float))
        w = np.atleast_1d(np.asarray(self.probs, dtype=float))
        if v.shape != w.shape or np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise ValueError("field levels need matching nonnegative probabilities summing to 1")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", w)


BRANCH_PLUS = {"T_uniform": 0.5, "T_minus1": 0.0}


@dataclass(frozen=True)
class MeanFieldConfig:
    damping: float = 0.5
    tol: float = 1e-13
    max_iter: int = 20000
    n_random: int = 5
    seed: int = 0


@dataclass
class MeanFieldResult:
    value: float
    block_mags: np.ndarray
    converged: bool
    candidates: list


def _site_law(tau, levels: FieldLevels, gamma, p_plus):
    """Fields and weights over (level, sign) cells."""
    signs = np.array([1.0, -1.0])
    sw = np.array([p_plus, 1.0 - p_plus])
    f = levels.values[:, None] + tau * signs[None, :] + gamma
    w = levels.probs[:, None] * sw[None, :]
    keep = w > 0
    return f[keep], w[keep]


def _G(W: BlockGraphon, mags_cells, f, w):
    """Mean-field functional at cell magnetizations ``mags_cells`` (B x cells)."""
    M = mags_cells @ w
    quad = 0.5 * (W.p * M) @ W.W @ (W.p * M)
    lin = W.p @ ((mags_cells * f[None, :] - rate_function(mags_cells)) @ w)
    return float(np.log(2.0) + quad + lin)


def meanfield_value(W: BlockGraphon, tau: float, levels: FieldLevels | None = None,
                    gamma: float = 0.0, branch: str = "T_uniform", p_plus: float | None = None,
                    cfg: MeanFieldConfig = MeanFieldConfig()) -> MeanFieldResult:
    """Maximize the block-constant mean-field functional by damped fixed-point iteration.

    Cell magnetizations solve ``m_{b,a,s} = tanh((W (p∘M))_b + field_{a,s})`` with
    ``M_b`` the block mean. ``p_plus`` overrides the treatment law of ``branch``.
    """
    levels = levels or FieldLevels()
    if p_plus is None:
        if branch not in BRANCH_PLUS:
            raise ValueError(f"unknown branch {branch!r}")
        p_plus = BRANCH_PLUS[branch]
    f, w = _site_law(tau, levels, gamma, p_plus)
    rng = make_rng(cfg.seed)
    B = W.B
    starts = [np.full(B, -0.9), np.zeros(B), np.full(B, 0.9)]
    starts += [rng.uniform(-1, 1, B) for _ in range(cfg.n_random)]
    cands = []
    for M in starts:
        ok = False
        for _ in range(cfg.max_iter):
            cells = np.tanh((W.W @ (W.p * M))[:, None] + f[None, :])
            new = (1 - cfg.damping) * M + cfg.damping * (cells @ w)
            if np.max(np.abs(new - M)) <= cfg.tol:
                M, ok = new, True
                break
            M = new
        cells = np.tanh((W.W @ (W.p * M))[:, None] + f[None, :])
        cands.append((_G(W, cells, f, w), ok, M))
    good = [c for c in cands if c[1]] or cands
    best = max(good, key=lambda c: c[0])
    return MeanFieldResult(best[0], best[2], bool(best[1]), [(c[0], c[1]) for c in cands])


class NonDifferentiablePoint(ArithmeticError):
    def __init__(self, left: float, right: float, where: str):
        super().__init__(f"one-sided derivatives in {where} disagree: {left:.6g} vs {right:.6g}")
        self.left = left
        self.right = right
        self.where = where


@dataclass
class GraphonEffects:
    de: float
    ie: float
    fd_gap: float


def _derivative(fn, x0: float, h: float, where: str):
    f0, fp, fm = fn(x0), fn(x0 + h), fn(x0 - h)
    right, left = (fp - f0) / h, (f0 - fm) / h
    gap = abs(right - left)
    if gap > 10 * h:
        raise NonDifferentiablePoint(left, right, where)
    d1 = (fp - fm) / (2 * h)
    d2 = (fn(x0 + h / 2) - fn(x0 - h / 2)) / h
    return (4 * d2 - d1) / 3, gap


def limiting_effects_graphon(W: BlockGraphon, tau: float, levels: FieldLevels | None = None,
                             fd_step: float = 1e-3,
                             cfg: MeanFieldConfig = MeanFieldConfig()) -> GraphonEffects:
    """Limiting DE and IE from numerical derivatives of the mean-field value."""
    if fd_step <= 0:
        raise ValueError("fd_step must be positive")
    levels = levels or FieldLevels()

    def val(branch, t, g):
        return meanfield_value(W, t, levels, g, branch, cfg=cfg).value

    dtau, g1 = _derivative(lambda t: val("T_uniform", t, 0.0), tau, fd_step, "tau")
    du, g2 = _derivative(lambda g: val("T_uniform", tau, g), 0.0, fd_step, "gamma")
    dm, g3 = _derivative(lambda g: val("T_minus1", tau, g), 0.0, fd_step, "gamma")
    de = 2 * dtau
    return GraphonEffects(de, du - dm - de / 2, max(g1, g2, g3))
