"""Exact max-weight solver and the tunable suboptimal algorithm family.

The suboptimal algorithm is modelled by the quality of its output as a
function of the runtime ``n`` (in slots) it is given. The output schedule is
realised by moving from a uniformly drawn initial power split towards the
optimum until the backlog-rate product reaches the prescribed value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from numba import njit

from .errors import TargetOutOfBracket
from .rates import RateModel, ScheduleVector, objective, objective_slope

KIND_GAP_DECAY = 0
KIND_FACTOR_G = 1
KIND_FACTOR_G_PTAS = 2

# relative tolerance on the product value reached by achieve_target
TARGET_RTOL = 1e-10
_MAX_ROOT_ITER = 200


@dataclass(frozen=True)
class GapDecay:
    """Gap to the optimal product shrinks by a factor ``beta`` per slot."""

    beta: float

    def __post_init__(self):
        if not self.beta > 1:
            raise ValueError(f"GapDecay.beta must be > 1, got {self.beta}")


@dataclass(frozen=True)
class FactorG:
    """Product >= xi * (1 - zeta**n) * optimum."""

    xi: float
    zeta: float

    def __post_init__(self):
        if not 0 < self.xi <= 1:
            raise ValueError(f"FactorG.xi must be in (0, 1], got {self.xi}")
        if not 0 <= self.zeta < 1:
            raise ValueError(f"FactorG.zeta must be in [0, 1), got {self.zeta}")


@dataclass(frozen=True)
class FactorGPTAS:
    """Product >= (1 - beta_p ln N / ln n) * optimum, clamped to [0, 1]; zero for n <= 1."""

    beta_p: float
    n_users: int

    def __post_init__(self):
        if not self.beta_p > 0:
            raise ValueError(f"FactorGPTAS.beta_p must be > 0, got {self.beta_p}")
        if self.n_users < 1:
            raise ValueError(f"FactorGPTAS.n_users must be >= 1, got {self.n_users}")


@dataclass(frozen=True)
class RandomizedH:
    """Runs ``base`` with probability h(n), otherwise returns the initial point.

    ``h[n]`` is the success probability for runtime ``n``; runtimes past the
    end of the table use the last entry.
    """

    base: Union[GapDecay, FactorG, FactorGPTAS]
    h: tuple[float, ...]

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        if h.ndim != 1 or h.size == 0:
            raise ValueError("RandomizedH.h must be a non-empty sequence")
        if np.any(h < 0) or np.any(h > 1):
            raise ValueError("RandomizedH.h entries must lie in [0, 1]")
        if np.any(np.diff(h) < 0):
            raise ValueError("RandomizedH.h must be nondecreasing")
        if isinstance(self.base, RandomizedH):
            raise ValueError("RandomizedH cannot wrap another RandomizedH")


AlgorithmVariant = Union[GapDecay, FactorG, FactorGPTAS, RandomizedH]


def encode_variant(variant: AlgorithmVariant) -> tuple[int, np.ndarray, np.ndarray]:
    """Flatten a variant into ``(kind, params, h)`` for the compiled kernels."""
    h = np.zeros(0)
    if isinstance(variant, RandomizedH):
        h = np.asarray(variant.h, dtype=float)
        variant = variant.base
    params = np.zeros(3)
    if isinstance(variant, GapDecay):
        params[0] = variant.beta
        return KIND_GAP_DECAY, params, h
    if isinstance(variant, FactorG):
        params[0], params[1] = variant.xi, variant.zeta
        return KIND_FACTOR_G, params, h
    if isinstance(variant, FactorGPTAS):
        params[0], params[1] = variant.beta_p, variant.n_users
        return KIND_FACTOR_G_PTAS, params, h
    raise TypeError(f"unknown algorithm variant {variant!r}")


@njit(cache=True)
def quality_factor(kind, params, n):
    """g(n) for the factor models."""
    if kind == KIND_FACTOR_G:
        return params[0] * (1.0 - params[1] ** n)
    if kind == KIND_FACTOR_G_PTAS:
        if n <= 1:
            return 0.0
        g = 1.0 - params[0] * math.log(params[1]) / math.log(n)
        return min(1.0, max(0.0, g))
    # gap decay behaves like g(n) = 1 - beta**-n when the initial product is 0
    return 1.0 - params[0] ** (-n)


@njit(cache=True)
def solve_exact_kernel(x1, x2, a1, a2, n0, pt):
    """Exact argmax of X.D(s, p1) over [0, pt].

    In either gain ordering the derivative's sign equals the sign of a
    function linear in p1, so the objective has at most one stationary point
    and the maximum is at an endpoint or at that point.
    """
    if x1 == 0.0 and x2 == 0.0:
        return 0.5 * pt, 0.0
    g1 = a1 * a1
    g2 = a2 * a2
    interior = -1.0
    if a1 < a2:
        # sign of d/dq with q = p2: n0 (x2 g2 - x1 g1) + q g1 g2 (x2 - x1)
        den = g1 * g2 * (x2 - x1)
        if den != 0.0:
            q = -n0 * (x2 * g2 - x1 * g1) / den
            if 0.0 < q < pt:
                interior = pt - q
    else:
        den = g1 * g2 * (x1 - x2)
        if den != 0.0:
            p = -n0 * (x1 * g1 - x2 * g2) / den
            if 0.0 < p < pt:
                interior = p
    best_p = 0.0
    best_v = objective(x1, x2, a1, a2, 0.0, n0, pt)
    v = objective(x1, x2, a1, a2, pt, n0, pt)
    if v > best_v:
        best_p, best_v = pt, v
    if interior >= 0.0:
        v = objective(x1, x2, a1, a2, interior, n0, pt)
        if v > best_v:
            best_p, best_v = interior, v
    return best_p, best_v


@njit(cache=True)
def achieve_target_kernel(x1, x2, a1, a2, p_init, p_opt, target, n0, pt):
    """Point on the segment [p_init, p_opt] whose product equals ``target``.

    Bracketing Newton iteration: every step keeps f(lo) < target <= f(hi) and
    falls back to bisection whenever Newton leaves the bracket or stalls.
    Returns NaN when ``target`` is not bracketed by the endpoint values.
    """
    f0 = objective(x1, x2, a1, a2, p_init, n0, pt)
    f1 = objective(x1, x2, a1, a2, p_opt, n0, pt)
    tol = TARGET_RTOL * max(1.0, abs(f1))
    if target < f0 - tol or target > f1 + tol:
        return np.nan
    if target <= f0 + tol:
        return p_init
    if target >= f1 - tol:
        return p_opt
    span = p_opt - p_init
    lo = 0.0
    hi = 1.0
    lam = (target - f0) / (f1 - f0)
    dx_old = 1.0
    for _ in range(_MAX_ROOT_ITER):
        p = p_init + lam * span
        v = objective(x1, x2, a1, a2, p, n0, pt)
        err = v - target
        if abs(err) <= tol:
            return p
        if err < 0.0:
            lo = lam
        else:
            hi = lam
        if hi - lo <= 1e-16:
            break
        slope = objective_slope(x1, x2, a1, a2, p, n0, pt) * span
        nxt = -1.0
        if slope != 0.0:
            nxt = lam - err / slope
        if nxt <= lo or nxt >= hi or abs(2.0 * (nxt - lam)) > abs(dx_old):
            nxt = 0.5 * (lo + hi)
        dx_old = nxt - lam
        lam = nxt
    return p_init + hi * span


@njit(cache=True)
def h_at(h, n):
    if n < h.shape[0]:
        return h[n]
    return h[h.shape[0] - 1]


@njit(cache=True)
def suboptimal_from_draws(kind, params, h, x1, x2, a1, a2, n, n0, pt, u_init, u_bern):
    """Output of algorithm A for runtime ``n`` given its uniform draws."""
    p_init = pt * u_init
    if h.shape[0] > 0 and not (u_bern < h_at(h, n)):
        return p_init
    p_opt, f_opt = solve_exact_kernel(x1, x2, a1, a2, n0, pt)
    f_init = objective(x1, x2, a1, a2, p_init, n0, pt)
    if kind == KIND_GAP_DECAY:
        if n == 0:
            return p_init
        target = f_opt - (f_opt - f_init) / params[0] ** n
    else:
        target = max(quality_factor(kind, params, n) * f_opt, f_init)
    target = min(max(target, f_init), f_opt)
    return achieve_target_kernel(x1, x2, a1, a2, p_init, p_opt, target, n0, pt)


@njit(cache=True)
def run_suboptimal_kernel(kind, params, h, x1, x2, a1, a2, n, n0, pt, rng):
    u_init = rng.random()
    u_bern = 0.0
    if h.shape[0] > 0:
        u_bern = rng.random()
    return suboptimal_from_draws(kind, params, h, x1, x2, a1, a2, n, n0, pt, u_init, u_bern)


def _f(X, s, rates: RateModel, p1: float) -> float:
    return objective(float(X[0]), float(X[1]), float(s[0]), float(s[1]), float(p1), float(rates.n0), float(rates.p_total))


def solve_exact(X, s, rates: RateModel) -> tuple[ScheduleVector, float]:
    """Max-weight schedule I*(X, s) and its product X.D*(X, s)."""
    X = np.asarray(X, dtype=float)
    if np.any(X < 0):
        raise ValueError("backlog must be componentwise >= 0")
    p, v = solve_exact_kernel(X[0], X[1], float(s[0]), float(s[1]), float(rates.n0), float(rates.p_total))
    return ScheduleVector(p, rates.p_total), v


def _golden_max(fun, a: float, b: float, tol: float = 1e-12) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    return 0.5 * (a + b)


def solve_exact_grid(X, s, rates: RateModel, grid: int = 4096) -> tuple[ScheduleVector, float]:
    """Grid search plus golden-section refinement of the best grid cell.

    Model-agnostic; used to cross-check :func:`solve_exact`.
    """
    X = np.asarray(X, dtype=float)
    pt = float(rates.p_total)
    if not np.any(X > 0):
        return ScheduleVector(0.5 * pt, pt), 0.0
    ps = np.linspace(0.0, pt, grid)
    vals = np.array([_f(X, s, rates, p) for p in ps])
    i = int(np.argmax(vals))
    lo, hi = ps[max(i - 1, 0)], ps[min(i + 1, grid - 1)]
    p = _golden_max(lambda q: _f(X, s, rates, q), lo, hi)
    v = _f(X, s, rates, p)
    if vals[i] >= v:
        p, v = ps[i], vals[i]
    return ScheduleVector(float(p), pt), float(v)


def achieve_target(X, s, p_init: float, p_opt: float, target_value: float, rates: RateModel) -> ScheduleVector:
    """Schedule on the segment [p_init, p_opt] with product ``target_value``."""
    p = achieve_target_kernel(
        float(X[0]), float(X[1]), float(s[0]), float(s[1]),
        float(p_init), float(p_opt), float(target_value), float(rates.n0), float(rates.p_total),
    )
    if math.isnan(p):
        lo, hi = _f(X, s, rates, p_init), _f(X, s, rates, p_opt)
        raise TargetOutOfBracket(f"target {target_value} outside [{lo}, {hi}]")
    return ScheduleVector(p, rates.p_total)


def run_suboptimal(variant: AlgorithmVariant, X, s, n: int, rates: RateModel, rng: np.random.Generator) -> ScheduleVector:
    """Schedule returned by algorithm A after ``n`` slots of runtime.

    Draws one uniform for the initial point, plus one Bernoulli uniform for
    :class:`RandomizedH`.
    """
    if n < 0:
        raise ValueError(f"runtime n must be >= 0, got {n}")
    X = np.asarray(X, dtype=float)
    if np.any(X < 0):
        raise ValueError("backlog must be componentwise >= 0")
    kind, params, h = encode_variant(variant)
    p = run_suboptimal_kernel(
        kind, params, h, X[0], X[1], float(s[0]), float(s[1]), int(n), float(rates.n0), float(rates.p_total), rng
    )
    return ScheduleVector(p, rates.p_total)
