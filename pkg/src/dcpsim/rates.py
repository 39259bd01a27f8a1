"""Two-user superposition-coding downlink rates.

A schedule is a power split (p1, P_t - p1). The user with the larger gain
decodes cleanly; the weaker user sees the stronger user's signal as noise.
Rates are in nats per slot (natural logarithm): the boundary point
a = (2.4181, 2.4181) of the first reference network equals ln(126)/2 only
under the natural log.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import PowerOutOfRange


@dataclass(frozen=True)
class RateModel:
    n0: float
    p_total: float

    def __post_init__(self):
        if not self.n0 > 0:
            raise ValueError(f"n0 must be > 0, got {self.n0}")
        if not self.p_total > 0:
            raise ValueError(f"p_total must be > 0, got {self.p_total}")

    def d_max(self, gains) -> float:
        """Upper bound on any single-user rate given the gain magnitudes in use."""
        g = float(np.max(np.asarray(gains, dtype=float))) ** 2
        return math.log1p(self.p_total * g / self.n0)


@dataclass(frozen=True)
class ScheduleVector:
    p1: float
    p_total: float

    @property
    def p2(self) -> float:
        return self.p_total - self.p1


@njit(cache=True)
def rates_kernel(a1, a2, p1, n0, pt):
    p2 = pt - p1
    g1 = a1 * a1
    g2 = a2 * a2
    if a1 < a2:
        d1 = math.log1p(p1 * g1 / (p2 * g1 + n0))
        d2 = math.log1p(p2 * g2 / n0)
    else:
        d1 = math.log1p(p1 * g1 / n0)
        d2 = math.log1p(p2 * g2 / (p1 * g2 + n0))
    return d1, d2


@njit(cache=True)
def objective(x1, x2, a1, a2, p1, n0, pt):
    """Backlog-rate product X . D(s, p1)."""
    d1, d2 = rates_kernel(a1, a2, p1, n0, pt)
    return x1 * d1 + x2 * d2


@njit(cache=True)
def objective_slope(x1, x2, a1, a2, p1, n0, pt):
    """d/dp1 of :func:`objective`."""
    p2 = pt - p1
    g1 = a1 * a1
    g2 = a2 * a2
    if a1 < a2:
        dd1 = g1 / (p2 * g1 + n0)
        dd2 = -g2 / (p2 * g2 + n0)
    else:
        dd1 = g1 / (p1 * g1 + n0)
        dd2 = -g2 / (p1 * g2 + n0)
    return x1 * dd1 + x2 * dd2


def rate_pair(model: RateModel, s, p1: float) -> tuple[float, float]:
    """(D1, D2) for gain magnitudes ``s = (|s1|, |s2|)`` and user-1 power ``p1``."""
    if not 0.0 <= p1 <= model.p_total:
        raise PowerOutOfRange(f"p1={p1} outside [0, {model.p_total}]")
    a1, a2 = float(s[0]), float(s[1])
    return rates_kernel(a1, a2, float(p1), float(model.n0), float(model.p_total))
