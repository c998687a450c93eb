"""Maximum pseudo-likelihood fitting and plug-in effect estimation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (DEFAULT_TAU_BOUND, DEFAULT_THETA_BOUND, EffectEstimate, OutcomeParams,
                    as_array)
from .parisi import log2cosh


@dataclass(frozen=True)
class ObservedData:
    y: np.ndarray
    t: np.ndarray
    x: np.ndarray
    A: np.ndarray
    M: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        t = np.asarray(self.t, dtype=float)
        n = y.shape[0]
        x = np.asarray(getattr(self.x, "values", self.x) if self.x is not None else np.zeros((n, 0)),
                       dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        A = as_array(self.A)
        if t.shape != (n,) or x.shape[0] != n or A.shape != (n, n):
            raise ValueError("observed arrays must all have length n")
        if not (np.all(np.abs(y) == 1) and np.all(np.abs(t) == 1)):
            raise ValueError("outcomes and treatments must be +/-1")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "A", A)
        if self.M is not None:
            object.__setattr__(self, "M", as_array(self.M))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def permuted(self, perm) -> "ObservedData":
        perm = np.asarray(perm)
        M = None if self.M is None else self.M[np.ix_(perm, perm)]
        return ObservedData(self.y[perm], self.t[perm], self.x[perm],
                            self.A[np.ix_(perm, perm)], M)


def _objective(beta: np.ndarray, spins: np.ndarray, offset: np.ndarray, Z: np.ndarray):
    """Value, gradient and Hessian of ``Σ [s_i m_i − log 2cosh m_i]``, ``m = offset + Zβ``."""
    m = offset + Z @ beta
    val = float(spins @ m - np.sum(log2cosh(m)))
    resid = spins - np.tanh(m)
    grad = Z.T @ resid
    sech2 = 1.0 / np.cosh(np.minimum(np.abs(m), 350.0)) ** 2
    hess = -(Z * sech2[:, None]).T @ Z
    return val, grad, hess


def pseudo_log_likelihood(p: OutcomeParams, data: ObservedData):
    """Outcome pseudo-log-likelihood and its gradient in (τ, θ)."""
    Z = np.column_stack([data.t, data.x])
    beta = np.concatenate([[p.tau], p.theta])
    if beta.size != Z.shape[1]:
        raise ValueError(f"theta has length {p.d}, data has {data.x.shape[1]} covariates")
    val, grad, _ = _objective(beta, data.y, data.A @ data.y, Z)
    return val, grad


@dataclass(frozen=True)
class NewtonParams:
    max_iter: int = 100
    grad_tol: float = 1e-8
    damping: float = 1e-8
    tau_bound: float = DEFAULT_TAU_BOUND
    theta_bound: float = DEFAULT_THETA_BOUND


@dataclass
class FitResult:
    coef: np.ndarray
    grad_norm: float
    iterations: int
    flags: list = field(default_factory=list)
    kind: str = "outcome"

    @property
    def converged(self) -> bool:
        return not self.flags

    @property
    def tau_hat(self) -> float | None:
        return float(self.coef[0]) if self.kind == "outcome" else None

    @property
    def theta_hat(self) -> np.ndarray | None:
        return self.coef[1:] if self.kind == "outcome" else None

    @property
    def gamma_hat(self) -> np.ndarray | None:
        return self.coef if self.kind == "propensity" else None

    def report(self) -> dict:
        def listed(v):
            return None if v is None else np.asarray(v).tolist()

        return {"tau_hat": self.tau_hat, "theta_hat": listed(self.theta_hat),
                "gamma_hat": listed(self.gamma_hat), "grad_norm": self.grad_norm,
                "iterations": self.iterations, "flags": list(self.flags)}


def _newton(spins, offset, Z, init, bounds, params: NewtonParams) -> FitResult:
    """Damped Newton ascent with backtracking and box projection."""
    flags = []
    if np.all(spins == spins[0]):
        flags.append("degenerate_data")
    beta = np.clip(np.asarray(init, dtype=float), -bounds, bounds)
    val, grad, hess = _objective(beta, spins, offset, Z)
    it = 0
    while it < params.max_iter:
        free = ~(((beta >= bounds) & (grad > 0)) | ((beta <= -bounds) & (grad < 0)))
        if np.max(np.abs(grad[free]), initial=0.0) <= params.grad_tol:
            break
        it += 1
        H = -hess + params.damping * np.eye(beta.size)
        step = np.zeros_like(beta)
        if np.any(free):
            step[free] = np.linalg.solve(H[np.ix_(free, free)], grad[free])
        lam = 1.0
        while True:
            trial = np.clip(beta + lam * step, -bounds, bounds)
            tv, tg, th = _objective(trial, spins, offset, Z)
            if tv >= val - 1e-12 * abs(val) or lam < 1e-12:
                break
            lam *= 0.5
        if np.array_equal(trial, beta):
            break
        beta, val, grad, hess = trial, tv, tg, th
    else:
        flags.append("iteration_cap")
    at_bound = np.abs(beta) >= bounds
    if np.any(at_bound):
        flags.append("boundary")
    free = ~at_bound
    gnorm = float(np.max(np.abs(grad[free]), initial=0.0))
    if gnorm > params.grad_tol and "iteration_cap" not in flags and "boundary" not in flags:
        flags.append("not_converged")
    return FitResult(beta, gnorm, it, flags)


def fit_mpl(data: ObservedData, init=None, newton: NewtonParams = NewtonParams()) -> FitResult:
    """Maximize the outcome pseudo-likelihood over (τ, θ)."""
    Z = np.column_stack([data.t, data.x])
    if init is None:
        init = np.zeros(Z.shape[1])
    bounds = np.concatenate([[newton.tau_bound], np.full(data.x.shape[1], newton.theta_bound)])
    return _newton(data.y, data.A @ data.y, Z, init, bounds, newton)


def fit_propensity(data: ObservedData, init=None, newton: NewtonParams = NewtonParams()) -> FitResult:
    """Maximize the treatment pseudo-likelihood over the covariate coefficients."""
    if data.M is None:
        raise ValueError("propensity fit needs the treatment couplings M")
    if data.x.shape[1] == 0:
        raise ValueError("propensity fit needs covariates")
    if init is None:
        init = np.zeros(data.x.shape[1])
    bounds = np.full(data.x.shape[1], newton.theta_bound)
    res = _newton(data.t, data.M @ data.t, data.x, init, bounds, newton)
    res.kind = "propensity"
    return res


def plug_in(method: str, data: ObservedData, estimator_params: dict,
            fit: FitResult | None = None, true_params: OutcomeParams | None = None) -> EffectEstimate:
    """Run an estimator at fitted parameters.

    ``estimator_params`` holds ``x_dist`` plus method knobs: for ``block`` the
    ``config`` (BlockEstimatorConfig) or ``eps``/``k_replicates``/``seed``; for
    ``amp`` the standardized coupling ``G``, ``beta`` and ``config`` (AmpConfig).
    """
    if fit is None:
        fit = fit_mpl(data)
    p_hat = OutcomeParams(fit.tau_hat, fit.theta_hat, 0.0)
    x_dist = estimator_params.get("x_dist")
    if method == "block":
        from .block import BlockEstimatorConfig, estimate_effects

        cfg = estimator_params.get("config") or BlockEstimatorConfig(
            eps=estimator_params.get("eps", 0.1),
            k_replicates=estimator_params.get("k_replicates", 200),
            seed=estimator_params.get("seed", 0))
        est = estimate_effects(data.A, x_dist, p_hat, config=cfg,
                               blocks=estimator_params.get("blocks"))
    elif method == "amp":
        from .amp import AmpConfig, amp_effects

        cfg = estimator_params.get("config") or AmpConfig()
        est = amp_effects(estimator_params["G"], estimator_params["beta"], p_hat.tau, x_dist,
                          p_hat.theta, cfg)
    else:
        raise ValueError(f"unknown method {method!r}")
    est.meta["fitted"] = {"tau": p_hat.tau, "theta": p_hat.theta.tolist()}
    if true_params is not None:
        est.meta["true"] = {"tau": true_params.tau, "theta": true_params.theta.tolist()}
    est.meta["fit_flags"] = list(fit.flags)
    return est
