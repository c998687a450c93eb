"""Parisi PDE for step measures, the Parisi functional, and its minimization.

For a measure with cumulative mass ``m`` constant on ``[a, b)`` the PDE
``∂_tΦ + β²/2 (Φ_xx + m Φ_x²) = 0`` is solved exactly by the Cole-Hopf step

    Φ(a, x) = (1/m) log E exp(m Φ(b, x + β √(b - a) Z)),

or the plain Gaussian average when ``m = 0``. Derivatives follow from the same
step under the tilted weights. Expectations use Gauss-Hermite quadrature and
off-grid values come from cubic Hermite interpolation on a uniform grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.optimize import minimize, minimize_scalar


class GridTooSmall(ValueError):
    pass


def log2cosh(x):
    x = np.abs(x)
    return x + np.log1p(np.exp(-2.0 * x))


def gauss_hermite(order: int):
    """Nodes and probability weights for a standard normal expectation."""
    if order < 3:
        raise ValueError("quadrature order must be at least 3")
    z, w = np.polynomial.hermite_e.hermegauss(order)
    return z, w / w.sum()


@dataclass(frozen=True)
class ParisiMeasure:
    """Step distribution function: ``μ[0, t] = m_j`` for ``t ∈ [q_j, q_{j+1})``."""

    q: np.ndarray
    m: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        m = np.atleast_1d(np.asarray(self.m, dtype=float))
        if q.size < 1 or q.shape != m.shape:
            raise ValueError("need J >= 1 atoms with one mass each")
        if np.any(q < 0) or np.any(q > 1) or np.any(np.diff(q) <= 0):
            raise ValueError("atom locations must be strictly increasing in [0, 1]")
        if np.any(m < 0) or np.any(np.diff(m) < 0) or abs(m[-1] - 1.0) > 1e-12:
            raise ValueError("masses must be nondecreasing in [0, 1] and end at 1")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "m", m)

    @classmethod
    def replica_symmetric(cls, q: float) -> "ParisiMeasure":
        return cls(np.array([q]), np.array([1.0]))

    @property
    def J(self) -> int:
        return self.q.size

    @property
    def support_min(self) -> float:
        return float(self.q[0])

    def cdf(self, t: float) -> float:
        idx = np.searchsorted(self.q, t, side="right") - 1
        return 0.0 if idx < 0 else float(self.m[idx])

    def intervals(self) -> list[tuple[float, float, float]]:
        """``(lower, upper, mass)`` for each constant piece, from t = 1 downwards."""
        knots = np.concatenate([[0.0], self.q, [1.0]])
        masses = np.concatenate([[0.0], self.m])
        out = []
        for j in range(len(knots) - 2, -1, -1):
            out.append((float(knots[j]), float(knots[j + 1]), float(masses[j])))
        return out

    def t_mu_integral(self) -> float:
        """``∫₀¹ t μ[0, t] dt`` in closed form."""
        upper = np.append(self.q[1:], 1.0)
        return float(np.sum(self.m * (upper ** 2 - self.q ** 2) / 2.0))


@dataclass(frozen=True)
class GridParams:
    step: float = 0.01
    gh_order: int = 41
    base_half_width: float = 12.0
    beta_factor: float = 4.0
    half_width: float | None = None

    def width(self, beta: float, field_bound: float) -> float:
        if self.half_width is not None:
            return float(self.half_width)
        return self.base_half_width + field_bound + self.beta_factor * beta


def _hermite(xq, x0: float, h: float, f: np.ndarray, df: np.ndarray):
    """Cubic Hermite interpolation on a uniform grid; linear extrapolation outside."""
    N = f.shape[0]
    lo, hi = x0, x0 + h * (N - 1)
    xc = np.clip(xq, lo, hi)
    u = (xc - lo) / h
    i = np.minimum(np.floor(u).astype(np.int64), N - 2)
    s = u - i
    s2, s3 = s * s, s * s * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    val = h00 * f[i] + h10 * h * df[i] + h01 * f[i + 1] + h11 * h * df[i + 1]
    below, above = xq < lo, xq > hi
    if np.any(below) or np.any(above):
        val = np.where(below, f[0] + df[0] * (xq - lo), val)
        val = np.where(above, f[-1] + df[-1] * (xq - hi), val)
    return val


@dataclass
class PdeSolution:
    """Φ, ∂_xΦ, ∂_xxΦ on a uniform grid at the knot times of a step measure."""

    x: np.ndarray
    times: np.ndarray
    phi: np.ndarray
    phix: np.ndarray
    phixx: np.ndarray
    beta: float
    mu: ParisiMeasure
    _phixxx: dict = field(default_factory=dict, repr=False)

    @property
    def step(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def half_width(self) -> float:
        return float(self.x[-1])

    def index(self, t: float) -> int:
        hits = np.flatnonzero(np.abs(self.times - t) <= 1e-12)
        if not hits.size:
            raise KeyError(f"no stored solution at t={t}")
        return int(hits[0])

    def at(self, t: float):
        j = self.index(t)
        return self.phi[j], self.phix[j], self.phixx[j]

    def evaluate(self, t: float, xq, order: int = 0):
        """Φ (order 0), ∂_xΦ (1) or ∂_xxΦ (2) at stored time ``t`` and arbitrary points."""
        j = self.index(t)
        xq = np.asarray(xq, dtype=float)
        if self.times[j] == 1.0:
            return _final(xq, order)
        x0, h = float(self.x[0]), self.step
        if order == 0:
            return _hermite(xq, x0, h, self.phi[j], self.phix[j])
        if order == 1:
            return np.clip(_hermite(xq, x0, h, self.phix[j], self.phixx[j]), -1.0, 1.0)
        if order == 2:
            if j not in self._phixxx:
                self._phixxx[j] = np.gradient(self.phixx[j], h)
            return np.clip(_hermite(xq, x0, h, self.phixx[j], self._phixxx[j]), 0.0, 1.0)
        raise ValueError("order must be 0, 1 or 2")


def _final(x, order: int):
    if order == 0:
        return log2cosh(x)
    if order == 1:
        return np.tanh(x)
    return 1.0 / np.cosh(np.minimum(np.abs(x), 350.0)) ** 2


@numba.njit(cache=True)
def _interp(xp, x0, h, f, df):
    N = f.shape[0]
    u = (xp - x0) / h
    if u <= 0.0:
        return f[0] + df[0] * (xp - x0)
    if u >= N - 1:
        return f[N - 1] + df[N - 1] * (xp - x0 - h * (N - 1))
    i = int(u)
    s = u - i
    s2 = s * s
    s3 = s2 * s
    return ((2 * s3 - 3 * s2 + 1) * f[i] + (s3 - 2 * s2 + s) * h * df[i]
            + (-2 * s3 + 3 * s2) * f[i + 1] + (s3 - s2) * h * df[i + 1])


@numba.njit(cache=True)
def _cole_hopf_step(x, f, fx, fxx, fxxx, analytic, shifts, w, mass):
    """One constant-mass step from stored (or analytic final) values to a lower time."""
    N = x.shape[0]
    L = shifts.shape[0]
    x0 = x[0]
    h = x[1] - x[0]
    p0 = np.empty(N)
    p1 = np.empty(N)
    p2 = np.empty(N)
    vf = np.empty(L)
    vfx = np.empty(L)
    vfxx = np.empty(L)
    for i in range(N):
        top = -np.inf
        for l in range(L):
            xp = x[i] + shifts[l]
            if analytic:
                a = abs(xp)
                vf[l] = a + np.log1p(np.exp(-2.0 * a))
                vfx[l] = np.tanh(xp)
                c = np.cosh(min(a, 350.0))
                vfxx[l] = 1.0 / (c * c)
            else:
                vf[l] = _interp(xp, x0, h, f, fx)
                vfx[l] = min(1.0, max(-1.0, _interp(xp, x0, h, fx, fxx)))
                vfxx[l] = min(1.0, max(0.0, _interp(xp, x0, h, fxx, fxxx)))
            if mass * vf[l] > top:
                top = mass * vf[l]
        if mass > 0.0:
            tot = 0.0
            for l in range(L):
                vf[l] = w[l] * np.exp(mass * vf[l] - top)
                tot += vf[l]
            m1 = 0.0
            m2 = 0.0
            for l in range(L):
                m1 += vf[l] * vfx[l]
                m2 += vf[l] * vfxx[l]
            m1 /= tot
            var = 0.0
            for l in range(L):
                d = vfx[l] - m1
                var += vf[l] * d * d
            p0[i] = (top + np.log(tot)) / mass
            p1[i] = m1
            p2[i] = m2 / tot + mass * var / tot
        else:
            a0 = 0.0
            a1 = 0.0
            a2 = 0.0
            for l in range(L):
                a0 += w[l] * vf[l]
                a1 += w[l] * vfx[l]
                a2 += w[l] * vfxx[l]
            p0[i] = a0
            p1[i] = a1
            p2[i] = a2
    return p0, p1, p2


def solve_parisi_pde(mu: ParisiMeasure, beta: float, grid: GridParams = GridParams(),
                     field_bound: float = 0.0) -> PdeSolution:
    """Backward Cole-Hopf recursion over the constant pieces of ``mu``."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    X = grid.width(beta, field_bound)
    if field_bound + 3.0 * beta > X:
        raise GridTooSmall(f"grid half-width {X} too small for fields {field_bound} at beta={beta}")
    z, w = gauss_hermite(grid.gh_order)
    N = int(round(2.0 * X / grid.step)) + 1
    x = np.linspace(-X, X, N)
    h = x[1] - x[0]
    times = [1.0]
    phi, phix, phixx = [log2cosh(x)], [np.tanh(x)], [_final(x, 2)]
    for lower, upper, mass in mu.intervals():
        if upper - lower <= 0.0:
            continue
        sigma = beta * np.sqrt(upper - lower)
        analytic = times[-1] == 1.0
        top = len(times) - 1
        third = np.zeros(1) if analytic else np.gradient(phixx[top], h)
        p0, p1, p2 = _cole_hopf_step(x, phi[top], phix[top], phixx[top], third, analytic,
                                     sigma * z, w, mass)
        times.append(lower)
        phi.append(p0)
        # the exact ranges; quadrature round-off can overshoot by an ulp
        phix.append(np.clip(p1, -1.0, 1.0))
        phixx.append(np.clip(p2, 0.0, 1.0))
    order = np.argsort(times)
    return PdeSolution(x, np.asarray(times)[order], np.asarray(phi)[order],
                       np.asarray(phix)[order], np.asarray(phixx)[order], float(beta), mu)


@dataclass(frozen=True)
class FieldDistribution:
    """Finite law of the scalar field ``τT + H`` as (value, probability) pairs."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.values, dtype=float))
        p = np.atleast_1d(np.asarray(self.probs, dtype=float))
        if v.shape != p.shape or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("need one non-negative probability per value, summing to 1")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p / p.sum())

    @property
    def bound(self) -> float:
        return float(np.max(np.abs(self.values)))

    def shifted(self, delta: float) -> "FieldDistribution":
        return FieldDistribution(self.values + delta, self.probs)

    @classmethod
    def point(cls, value: float = 0.0) -> "FieldDistribution":
        return cls(np.array([value]), np.array([1.0]))

    @classmethod
    def treatment_mixture(cls, tau: float, h_values=(0.0,), h_probs=(1.0,),
                          branch: str = "uniform") -> "FieldDistribution":
        """Law of ``τT + H`` with T uniform on ±1 (``uniform``) or fixed at -1 (``minus``)."""
        hv = np.atleast_1d(np.asarray(h_values, dtype=float))
        hp = np.atleast_1d(np.asarray(h_probs, dtype=float))
        if branch == "uniform":
            return cls(np.concatenate([tau + hv, -tau + hv]), np.concatenate([hp, hp]) / 2.0)
        if branch == "minus":
            return cls(-tau + hv, hp)
        raise ValueError(f"unknown branch {branch!r}")


def covariate_field_law(x_dist, theta) -> FieldDistribution:
    """Law of ``H = θᵀX`` for a finite covariate distribution (merged duplicates)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.size == 0 or x_dist is None or x_dist.kind == "none":
        return FieldDistribution.point(0.0)
    if not x_dist.is_finite:
        raise ValueError("field law needs a finite covariate distribution (discretize first)")
    vals = np.round(x_dist.support @ theta, 12)
    uniq, inv = np.unique(vals, return_inverse=True)
    return FieldDistribution(uniq, np.bincount(inv, weights=x_dist.probs))


def parisi_functional(mu: ParisiMeasure, beta: float, fields: FieldDistribution,
                      gamma: float = 0.0, grid: GridParams = GridParams(),
                      solution: PdeSolution | None = None) -> float:
    """``E Φ_μ(0, field + γ) − (β²/2) ∫ t μ[0, t] dt``."""
    if solution is None:
        solution = solve_parisi_pde(mu, beta, grid, fields.bound + abs(gamma))
    vals = solution.evaluate(0.0, fields.values + gamma, 0)
    return float(fields.probs @ vals - 0.5 * beta ** 2 * mu.t_mu_integral())


@dataclass(frozen=True)
class ParisiOptConfig:
    grid: GridParams = GridParams()
    xatol: float = 1e-7
    fatol: float = 1e-10
    max_evals: int = 400
    fd_step: float = 1e-4
    extra_starts: int = 2
    seed: int = 0


@dataclass
class ParisiResult:
    mu: ParisiMeasure
    value: float
    converged: bool
    grad_norm: float
    evaluations: int
    J: int

    @property
    def q(self) -> float:
        """Smallest atom location, clamped to 0 below 1e-4."""
        q = self.mu.support_min
        return 0.0 if q < 1e-4 else q


def _measure_from_raw(raw: np.ndarray, J: int) -> ParisiMeasure:
    q = np.sort(np.sin(raw[:J]) ** 2)
    m = np.append(np.sort(np.sin(raw[J:]) ** 2), 1.0)
    # coincident atoms bound an empty piece; the upper one carries the mass
    keep = np.append(np.diff(q) > 0, True)
    return ParisiMeasure(q[keep], m[keep])


def _raw_from_measure(mu: ParisiMeasure) -> np.ndarray:
    return np.concatenate([np.arcsin(np.sqrt(mu.q)), np.arcsin(np.sqrt(mu.m[:-1]))])


def _embed(mu: ParisiMeasure, J: int) -> ParisiMeasure:
    """The same measure written with ``J`` atoms."""
    q, m = list(mu.q), list(mu.m)
    while len(q) < J:
        if q[-1] < 1.0:
            q.append(0.5 * (q[-1] + 1.0))
            m.append(1.0)
        elif q[0] > 0.0:
            q.insert(0, 0.5 * q[0])
            m.insert(0, 0.0)
        else:
            q.insert(1, 0.5 * (q[0] + q[1]))
            m.insert(1, m[0])
    return ParisiMeasure(np.array(q), np.array(m))


def minimize_parisi(beta: float, fields: FieldDistribution, gamma: float = 0.0, J: int = 1,
                    opt: ParisiOptConfig = ParisiOptConfig()) -> ParisiResult:
    """Minimize the functional over measures with at most ``J`` atoms.

    ``J = 1`` is a bounded scalar search over the atom location. Larger ``J``
    runs Nelder-Mead over ``sin²``-mapped atom locations and masses, started
    from the ``J - 1`` optimum embedded in the larger family, so the value
    never increases with ``J``.
    """
    if J < 1:
        raise ValueError("J must be at least 1")
    bound = fields.bound + abs(gamma)

    def value(mu: ParisiMeasure) -> float:
        return parisi_functional(mu, beta, fields, gamma, opt.grid,
                                 solve_parisi_pde(mu, beta, opt.grid, bound))

    if J == 1:
        f = lambda q: value(ParisiMeasure.replica_symmetric(float(q)))
        res = minimize_scalar(f, bounds=(0.0, 1.0), method="bounded",
                              options={"xatol": opt.xatol, "maxiter": opt.max_evals})
        best_q, best_v = float(res.x), float(res.fun)
        for edge in (0.0, 1.0):
            v = f(edge)
            if v < best_v:
                best_q, best_v = edge, v
        h = opt.fd_step
        lo, hi = max(0.0, best_q - h), min(1.0, best_q + h)
        grad = (f(hi) - f(lo)) / (hi - lo)
        interior = 1e-6 < best_q < 1.0 - 1e-6
        return ParisiResult(ParisiMeasure.replica_symmetric(best_q), best_v, bool(res.success),
                            abs(grad) if interior else 0.0, int(res.nfev) + 4, 1)
    prev = minimize_parisi(beta, fields, gamma, J - 1, opt)
    start = _embed(prev.mu, J)
    raw_fn = lambda r: value(_measure_from_raw(r, J))
    starts = [_raw_from_measure(start)]
    rng = np.random.default_rng(opt.seed)
    for _ in range(opt.extra_starts):
        starts.append(rng.uniform(0.0, np.pi / 2, size=2 * J - 1))
    best = None
    evals = prev.evaluations
    for s in starts:
        res = minimize(raw_fn, s, method="Nelder-Mead",
                       options={"xatol": max(opt.xatol, 1e-5), "fatol": opt.fatol,
                                "maxfev": opt.max_evals})
        evals += int(res.nfev)
        if best is None or res.fun < best.fun:
            best = res
    mu = _measure_from_raw(best.x, J)
    val = float(best.fun)
    if not val < prev.value:
        return ParisiResult(prev.mu, prev.value, prev.converged, prev.grad_norm, evals, J)
    h = opt.fd_step
    grad = np.array([(raw_fn(best.x + h * e) - raw_fn(best.x - h * e)) / (2 * h)
                     for e in np.eye(best.x.size)])
    return ParisiResult(mu, val, bool(best.success), float(np.max(np.abs(grad))), evals, J)


@dataclass
class LimitingEffects:
    de: float
    ie: float
    uniform: ParisiResult
    minus: ParisiResult


def limiting_effects(beta: float, tau: float, fields_h: FieldDistribution | None = None,
                     J: int = 1, opt: ParisiOptConfig = ParisiOptConfig()) -> LimitingEffects:
    """Large-n DE and IE for Gaussian couplings from the two Parisi minimizers."""
    if fields_h is None:
        fields_h = FieldDistribution.point(0.0)
    uni = FieldDistribution.treatment_mixture(tau, fields_h.values, fields_h.probs, "uniform")
    neg = FieldDistribution.treatment_mixture(tau, fields_h.values, fields_h.probs, "minus")
    r_uni = minimize_parisi(beta, uni, 0.0, J, opt)
    r_neg = minimize_parisi(beta, neg, 0.0, J, opt)
    bound = uni.bound
    sol_u = solve_parisi_pde(r_uni.mu, beta, opt.grid, bound)
    sol_n = solve_parisi_pde(r_neg.mu, beta, opt.grid, bound)
    hv, hp = fields_h.values, fields_h.probs
    dx_plus = sol_u.evaluate(0.0, tau + hv, 1)
    dx_minus = sol_u.evaluate(0.0, -tau + hv, 1)
    de = float(hp @ (dx_plus - dx_minus))
    mean_u = float(hp @ (0.5 * (dx_plus + dx_minus)))
    mean_n = float(hp @ sol_n.evaluate(0.0, -tau + hv, 1))
    return LimitingEffects(de, mean_u - mean_n - 0.5 * de, r_uni, r_neg)
