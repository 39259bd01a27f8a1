"""Steady-state quality of fixed-runtime scheduling and region-scaling constants.

``phi`` is the expected backlog-rate product per slot, normalized by the
backlog norm, when the backlog is frozen at a direction X and the solver is
given N1 slots per frame. The schedule computed from the state at a frame
start is used during the following frame, so the channel is integrated
exactly over slots N1 .. 2*N1 - 1 after the snapshot. Only the solver's own
randomness is sampled.

Sampling is stratified over the snapshot state (``round(mc * pi(s))``
samples per state, reweighted by pi), and the same solver draws are reused
for every N1 of a direction so that the comparison across N1 is paired.
Each direction j of a grid uses its own stream ``SeedSequence(seed,
spawn_key=(j,))``, so results do not depend on evaluation order or on the
number of worker processes.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from numba import njit

from .channel import ChannelModel
from .errors import SideConditionViolated, TruncationInsufficient
from .rates import RateModel, objective
from .solver import AlgorithmVariant, encode_variant, solve_exact_kernel, suboptimal_from_draws

DEFAULT_GRID = 180
DEFAULT_MC_SAMPLES = 100_000
DEFAULT_WEIGHT_ANGLES = 181


@dataclass(frozen=True)
class DirectionGrid:
    """Unit backlog directions at angles j*pi/(2G), j = 0..G."""

    angles: np.ndarray
    directions: np.ndarray

    @classmethod
    def uniform(cls, g: int = DEFAULT_GRID) -> "DirectionGrid":
        if g < 1:
            raise ValueError(f"grid size must be >= 1, got {g}")
        ang = np.arange(g + 1) * (math.pi / (2 * g))
        dirs = np.column_stack([np.cos(ang), np.sin(ang)])
        dirs[-1, 0] = 0.0  # cos(pi/2) is 6e-17, keep the axis exact
        return cls(ang, dirs)

    def __len__(self) -> int:
        return len(self.angles)


def unit_direction(degrees: float) -> np.ndarray:
    a = math.radians(degrees)
    if not -1e-12 <= a <= math.pi / 2 + 1e-12:
        raise ValueError(f"direction must lie in [0, 90] degrees, got {degrees}")
    return np.array([max(math.cos(a), 0.0), max(math.sin(a), 0.0)])


def _unit(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape != (2,) or np.any(X < 0):
        raise ValueError("direction must be a nonnegative 2-vector")
    n = float(np.linalg.norm(X))
    if n == 0.0:
        raise ValueError("direction must be nonzero")
    return X / n


def lag_weights(channel: ChannelModel, n1: int) -> np.ndarray:
    """W[s0, s'] = mean over j < n1 of P(state n1 + j slots after s0 is s')."""
    if n1 < 1:
        raise ValueError(f"N1 must be >= 1, got {n1}")
    step = channel.T
    cur = channel.matrix_power(n1)
    acc = np.zeros_like(cur)
    for _ in range(n1):
        acc += cur
        cur = cur @ step
    return acc / n1


@njit(cache=True)
def _phi_samples(kind, params, h, x1, x2, gains, weights, s0, u_init, u_bern, n1, n0, pt):
    out = np.empty(s0.shape[0])
    n_states = gains.shape[0]
    for k in range(s0.shape[0]):
        s = s0[k]
        p = suboptimal_from_draws(
            kind, params, h, x1, x2, gains[s, 0], gains[s, 1], n1, n0, pt, u_init[k], u_bern[k]
        )
        v = 0.0
        for sp in range(n_states):
            w = weights[s, sp]
            if w != 0.0:
                v += w * objective(x1, x2, gains[sp, 0], gains[sp, 1], p, n0, pt)
        out[k] = v
    return out


def _strata(channel: ChannelModel, mc_samples: int) -> np.ndarray:
    counts = np.maximum(np.rint(mc_samples * channel.pi).astype(np.int64), 1)
    return np.repeat(np.arange(channel.n_states, dtype=np.int64), counts)


def phi_estimates(
    X,
    n1_set: Sequence[int],
    channel: ChannelModel,
    rates: RateModel,
    variant: AlgorithmVariant,
    mc_samples: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """phi(X, N1) and its Monte-Carlo standard error for each N1, on shared draws."""
    if mc_samples < 1:
        raise ValueError(f"mc_samples must be >= 1, got {mc_samples}")
    X = _unit(X)
    kind, params, h = encode_variant(variant)
    s0 = _strata(channel, mc_samples)
    u_init = rng.random(len(s0))
    u_bern = rng.random(len(s0)) if len(h) else np.zeros(len(s0))
    gains = np.ascontiguousarray(channel.states, dtype=np.float64)
    pi = channel.pi
    means = np.empty(len(n1_set))
    ses = np.empty(len(n1_set))
    for i, n1 in enumerate(n1_set):
        vals = _phi_samples(
            kind, params, h, X[0], X[1], gains, lag_weights(channel, int(n1)), s0, u_init, u_bern,
            int(n1), float(rates.n0), float(rates.p_total),
        )
        m = 0.0
        var = 0.0
        for s in range(channel.n_states):
            v = vals[s0 == s]
            m += pi[s] * v.mean()
            if len(v) > 1:
                var += pi[s] ** 2 * v.var(ddof=1) / len(v)
        means[i] = m
        ses[i] = math.sqrt(var)
    return means, ses


def phi_of(X, n1: int, channel, rates, variant, mc_samples: int, rng: np.random.Generator) -> float:
    """Expected normalized backlog-rate product per slot for frame length ``n1``."""
    return float(phi_estimates(X, [n1], channel, rates, variant, mc_samples, rng)[0][0])


def _best(values: np.ndarray) -> int:
    # np.argmax returns the first maximum, i.e. the smallest N1 on ties
    return int(np.argmax(values))


def phi_tilde(X, channel, rates, variant, n1_set: Sequence[int], mc_samples: int, rng) -> tuple[int, float]:
    """(best N1, its phi) over the candidate set; ties go to the smaller N1."""
    n1_sorted = sorted(n1_set)
    vals, _ = phi_estimates(X, n1_sorted, channel, rates, variant, mc_samples, rng)
    i = _best(vals)
    return n1_sorted[i], float(vals[i])


def chi_of(X, channel: ChannelModel, rates: RateModel) -> float:
    """Stationary mean of the optimal normalized product."""
    X = _unit(X)
    total = 0.0
    for s, w in zip(channel.states, channel.pi):
        total += w * solve_exact_kernel(X[0], X[1], float(s[0]), float(s[1]), float(rates.n0), float(rates.p_total))[1]
    return float(total)


@dataclass
class DirectionTable:
    """phi for every (direction, N1) pair plus chi per direction."""

    angles: np.ndarray
    directions: np.ndarray
    n1_set: tuple[int, ...]
    chi: np.ndarray
    phi: np.ndarray
    phi_se: np.ndarray

    @property
    def best_index(self) -> np.ndarray:
        return np.array([_best(row) for row in self.phi])

    @property
    def n1_tilde(self) -> np.ndarray:
        return np.asarray(self.n1_set)[self.best_index]

    @property
    def phi_tilde(self) -> np.ndarray:
        return self.phi[np.arange(len(self.phi)), self.best_index]

    def theta_inf(self) -> tuple[float, int]:
        """(min over directions of phi_tilde / chi, arg-min direction index)."""
        r = self.phi_tilde / self.chi
        j = int(np.argmin(r))
        return float(r[j]), j

    def theta_static_all(self) -> np.ndarray:
        return (self.phi / self.chi[:, None]).min(axis=0)

    def theta_static(self, n1: int) -> float:
        return float(self.theta_static_all()[self.n1_set.index(n1)])

    def theta_static_best(self) -> tuple[int, float]:
        t = self.theta_static_all()
        i = _best(t)
        return self.n1_set[i], float(t[i])

    def to_csv(self, path: Union[str, Path, None] = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["angle_deg", "x1", "x2", "chi", "n1_tilde", "phi_tilde", "ratio"]
                   + [f"phi_n1_{n}" for n in self.n1_set])
        for j in range(len(self.angles)):
            w.writerow(
                [repr(float(np.degrees(self.angles[j]))), repr(float(self.directions[j, 0])),
                 repr(float(self.directions[j, 1])), repr(float(self.chi[j])), int(self.n1_tilde[j]),
                 repr(float(self.phi_tilde[j])), repr(float(self.phi_tilde[j] / self.chi[j]))]
                + [repr(float(v)) for v in self.phi[j]]
            )
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def direction_stream(seed: int, j: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(j,)))


def _table_rows(args):
    dirs, idx, channel, rates, variant, n1_set, mc_samples, seed = args
    chi = np.empty(len(idx))
    phi = np.empty((len(idx), len(n1_set)))
    se = np.empty_like(phi)
    for k, j in enumerate(idx):
        chi[k] = chi_of(dirs[k], channel, rates)
        phi[k], se[k] = phi_estimates(dirs[k], n1_set, channel, rates, variant, mc_samples, direction_stream(seed, j))
    return chi, phi, se


def direction_table(
    grid: DirectionGrid,
    channel: ChannelModel,
    rates: RateModel,
    variant: AlgorithmVariant,
    n1_set: Sequence[int],
    mc_samples: int = DEFAULT_MC_SAMPLES,
    seed: int = 0,
    jobs: int = 1,
) -> DirectionTable:
    n1_set = tuple(sorted(int(n) for n in n1_set))
    if not n1_set:
        raise ValueError("N1 set must be nonempty")
    idx = np.arange(len(grid))
    parts = [c for c in np.array_split(idx, max(1, min(jobs, len(idx)))) if len(c)]
    tasks = [(grid.directions[c], c, channel, rates, variant, n1_set, mc_samples, seed) for c in parts]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_table_rows, tasks))
    else:
        results = [_table_rows(t) for t in tasks]
    chi = np.concatenate([r[0] for r in results])
    phi = np.concatenate([r[1] for r in results])
    se = np.concatenate([r[2] for r in results])
    return DirectionTable(grid.angles, grid.directions, n1_set, chi, phi, se)


def theta_inf(grid, channel, rates, variant, n1_set, mc_samples=DEFAULT_MC_SAMPLES, seed=0, jobs=1):
    """(theta_inf, arg-min direction, per-direction table)."""
    table = direction_table(grid, channel, rates, variant, n1_set, mc_samples, seed, jobs)
    value, j = table.theta_inf()
    return value, table.directions[j], table


def theta_static(n1, grid, channel, rates, variant, mc_samples=DEFAULT_MC_SAMPLES, seed=0, jobs=1) -> float:
    table = direction_table(grid, channel, rates, variant, [n1], mc_samples, seed, jobs)
    return table.theta_static(n1)


def theta_static_best(grid, channel, rates, variant, n1_set, mc_samples=DEFAULT_MC_SAMPLES, seed=0, jobs=1):
    """(best N1, its static scaling factor)."""
    return direction_table(grid, channel, rates, variant, n1_set, mc_samples, seed, jobs).theta_static_best()


def theta_csv(table: DirectionTable, path: Union[str, Path, None] = None) -> str:
    """Static scaling factor per N1, followed by a ``theta_inf`` row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n1", "theta_static"])
    for n1, t in zip(table.n1_set, table.theta_static_all()):
        w.writerow([n1, repr(float(t))])
    w.writerow(["theta_inf", repr(table.theta_inf()[0])])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


# -- DCP guarantee -------------------------------------------------------------


@dataclass(frozen=True)
class RinfParams:
    delta: float
    rho_phi: float
    l1: int
    k_max: int = 1000

    def __post_init__(self):
        if not 0.0 < self.delta <= 1.0:
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")
        if not 0.0 <= self.rho_phi < 1.0:
            raise ValueError(f"rho_phi must lie in [0, 1), got {self.rho_phi}")
        if self.l1 < 1 or self.l1 & (self.l1 - 1):
            raise ValueError(f"L1 must be a positive power of two, got {self.l1}")
        if self.k_max < 1000:
            raise ValueError(f"k_max must be >= 1000, got {self.k_max}")

    @property
    def delta_prime(self) -> float:
        return (1.0 - self.rho_phi) ** 2 * self.delta


def n3_prime_update_sum(i_phi: int, l1: int) -> int:
    """Sum of the surrogate update multipliers over the i_phi good rounds."""
    if i_phi <= 0:
        return 0
    if i_phi == 1:
        return 1
    return 2 + sum(min(2**k, l1) for k in range(i_phi - 1))


def r_infinity(params: RinfParams) -> float:
    """Long-run fraction of time spent in update intervals of good rounds.

    With a = i_delta (geometric on {1, 2, ...}, success probability
    delta') and b = i_phi, the ratio of expectations reduces to
    E[num(b)] / ((1 + L1)(E[a] + 1) + E[b] + E[num(b)]). Terms with
    b <= log2(L1) + 1 are summed directly; beyond that num(b) is affine in b
    and the remaining geometric series are summed in closed form.
    """
    l1 = params.l1
    rho = params.rho_phi
    if rho == 0.0:
        return l1 / (1.0 + l1)
    m = l1.bit_length() - 1
    if m + 2 > params.k_max:
        raise TruncationInsufficient(f"L1 = {l1} needs k_max >= {m + 2}")
    q = (1.0 - rho) ** 2
    one_minus_q = rho * (2.0 - rho)
    c = one_minus_q / (1.0 - rho)  # P(b = k) = c * q**k for k >= 1
    e_num = 0.0
    for b in range(1, m + 2):
        e_num += c * q**b * n3_prime_update_sum(b, l1)
    tail = c * q ** (m + 2) * ((1.0 + 2.0 * l1) / one_minus_q + l1 * q / one_minus_q**2)
    e_num += tail
    e_a = 1.0 / params.delta_prime
    e_b = (1.0 - rho) / one_minus_q
    return e_num / ((1.0 + l1) * (e_a + 1.0) + e_b + e_num)


def theta_dcp_lower(alpha: float, theta_phi: float, params: RinfParams, table: DirectionTable) -> float:
    """Sufficient DCP scaling factor from a precomputed direction table."""
    if not 6.0 * theta_phi < alpha:
        raise SideConditionViolated(f"need 6*theta_phi < alpha, got theta_phi={theta_phi}, alpha={alpha}")
    pt = table.phi_tilde
    if not 2.0 * alpha <= float(pt.min()):
        raise SideConditionViolated(f"need 2*alpha <= min phi_tilde = {float(pt.min())}, got alpha={alpha}")
    return r_infinity(params) * float(((pt - alpha - 3.0 * theta_phi) / table.chi).min())


# -- capacity region -------------------------------------------------------------


def capacity_support(w, channel: ChannelModel, rates: RateModel) -> float:
    """Support function of the capacity region at weight ``w``."""
    w = np.asarray(w, dtype=float)
    if w.shape != (2,) or np.any(w < 0):
        raise ValueError("weight must be a nonnegative 2-vector")
    total = 0.0
    for s, p in zip(channel.states, channel.pi):
        total += p * solve_exact_kernel(w[0], w[1], float(s[0]), float(s[1]), float(rates.n0), float(rates.p_total))[1]
    return float(total)


def capacity_boundary_along(d, channel: ChannelModel, rates: RateModel, n_weights: int = DEFAULT_WEIGHT_ANGLES) -> np.ndarray:
    """Boundary point t* d of the capacity region along direction ``d``."""
    d = np.asarray(d, dtype=float)
    if d.shape != (2,) or np.any(d < 0) or not np.any(d > 0):
        raise ValueError("direction must be a nonzero nonnegative 2-vector")
    ws = DirectionGrid.uniform(n_weights - 1).directions
    best = math.inf
    for w in ws:
        wd = float(w @ d)
        if wd > 0.0:
            best = min(best, capacity_support(w, channel, rates) / wd)
    return best * d


def boundary_csv(d, point: np.ndarray, path: Union[str, Path, None] = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["d1", "d2", "a1", "a2"])
    w.writerow([repr(float(d[0])), repr(float(d[1])), repr(float(point[0])), repr(float(point[1]))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
