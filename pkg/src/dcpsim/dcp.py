"""Runtime controllers: the dynamic control policy and its baselines.

Every controller exposes ``tick(t, x, s, rng) -> p1``: called once per slot
with the current backlog and channel state index, it returns the user-1
power of the schedule in use for that slot. Solver draws come from ``rng``;
the dynamic controller draws its frame-length candidates from a private
stream so that it consumes the solver stream exactly like a static policy.

Schedules are deployed with a one-frame lag: the schedule computed from the
snapshot taken at a frame start is used throughout the following frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import numba as nb
from numba import njit
from numba.experimental import jitclass

from .channel import ChannelModel
from .errors import ClockRegression
from .rates import RateModel, rates_kernel
from .solver import AlgorithmVariant, encode_variant, run_suboptimal_kernel, solve_exact_kernel

TEST = 0
UPDATE = 1

# columns of DcpController.history
H_ROUND, H_START, H_N1_R, H_PHI_R, H_N1, H_N3, H_PHI, H_ADOPTED = range(8)
HISTORY_COLUMNS = ("round", "t_start", "n1_candidate", "phi_test", "n1", "n3", "phi_update", "adopted")

_generator_type = nb.types.NumPyRandomGeneratorType("NumPyRandomGeneratorType")


@dataclass(frozen=True)
class DcpConfig:
    n_c: int
    alpha: float
    l1: int
    n1_set: tuple[int, ...]
    variant: AlgorithmVariant

    def __post_init__(self):
        if self.n_c < 1:
            raise ValueError(f"n_c must be >= 1, got {self.n_c}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.l1 < 1 or self.l1 & (self.l1 - 1):
            raise ValueError(f"l1 must be a positive power of two, got {self.l1}")
        if not self.n1_set:
            raise ValueError("n1_set must be non-empty")
        for n1 in self.n1_set:
            if n1 < 1 or self.n_c % n1:
                raise ValueError(f"frame length {n1} does not divide n_c={self.n_c}")

    @property
    def delta(self) -> float:
        """Probability that any given candidate is drawn."""
        return 1.0 / len(self.n1_set)


@dataclass(frozen=True)
class StaticPolicy:
    """Fixed frame length ``n1`` forever; frames start at multiples of ``n1``."""

    n1: int
    variant: AlgorithmVariant

    def __post_init__(self):
        if self.n1 < 1:
            raise ValueError(f"frame length must be >= 1, got {self.n1}")


@dataclass(frozen=True)
class OraclePolicy:
    """Exact max-weight schedule every slot with no lag (benchmark only)."""


@njit(cache=True)
def apply_update_rule(phi_r, phi_prev, n1_cur, n1_r, n3_cur, alpha, l1):
    """Frame length and update-interval multiplier for the coming update interval."""
    if phi_r > phi_prev + alpha:
        return n1_r, max(1, n3_cur // 2)
    return n1_cur, min(l1, 2 * n3_cur)


@njit(cache=True)
def pick_candidate(n1_set, rng):
    """Uniform draw from the candidate set; one ``rng.random()`` draw."""
    k = n1_set.shape[0]
    i = int(rng.random() * k)
    if i >= k:
        i = k - 1
    return n1_set[i]


_common = [
    ("gains", nb.float64[:, :]),
    ("n0", nb.float64),
    ("pt", nb.float64),
    ("kind", nb.int64),
    ("params", nb.float64[:]),
    ("h", nb.float64[:]),
    ("last_t", nb.int64),
    ("started", nb.boolean),
    ("frame_len", nb.int64),
    ("interval_start", nb.int64),
    ("in_use", nb.float64),
    ("pending", nb.float64),
    ("has_pending", nb.boolean),
    ("x_snap", nb.float64[:]),
    ("s_snap", nb.int64),
    ("snap_t", nb.int64),
    ("in_use_snap_t", nb.int64),
    ("pending_snap_t", nb.int64),
]


@jitclass(
    _common
    + [
        ("n_c", nb.int64),
        ("alpha", nb.float64),
        ("l1", nb.int64),
        ("n1_set", nb.int64[:]),
        ("cand_rng", _generator_type),
        ("phase", nb.int64),
        ("round_index", nb.int64),
        ("round_start", nb.int64),
        ("interval_len", nb.int64),
        ("n1", nb.int64),
        ("n1_r", nb.int64),
        ("n3", nb.int64),
        ("adopted", nb.boolean),
        ("phi_prev", nb.float64),
        ("phi_r", nb.float64),
        ("acc", nb.float64),
        ("norm_start", nb.float64),
        ("history", nb.float64[:, :]),
        ("n_rounds", nb.int64),
    ]
)
class DcpController:
    def __init__(self, gains, n0, pt, kind, params, h, n_c, alpha, l1, n1_set, cand_rng):
        self.gains = gains
        self.n0 = n0
        self.pt = pt
        self.kind = kind
        self.params = params
        self.h = h
        self.n_c = n_c
        self.alpha = alpha
        self.l1 = l1
        self.n1_set = n1_set
        self.cand_rng = cand_rng
        self.last_t = -1
        self.started = False
        self.phase = TEST
        self.round_index = -1
        self.round_start = 0
        self.interval_start = 0
        self.interval_len = n_c
        self.n1 = n1_set.min()
        self.n1_r = self.n1
        self.frame_len = self.n1
        self.n3 = 1
        self.adopted = False
        self.phi_prev = 0.0
        self.phi_r = 0.0
        self.acc = 0.0
        self.norm_start = 0.0
        self.in_use = 0.5 * pt
        self.pending = 0.5 * pt
        self.has_pending = False
        self.x_snap = np.zeros(gains.shape[1])
        self.s_snap = -1
        self.snap_t = -1
        self.in_use_snap_t = -1
        self.pending_snap_t = -1
        self.history = np.zeros((16, 8))
        self.n_rounds = 0

    @property
    def n2(self):
        return self.n_c // self.frame_len

    def _interval_phi(self):
        if self.norm_start == 0.0:
            return 0.0
        return self.acc / (self.interval_len * self.norm_start)

    def _open_interval(self, t, length, frame_len, x):
        self.interval_start = t
        self.interval_len = length
        self.frame_len = frame_len
        self.acc = 0.0
        self.norm_start = math.sqrt(np.sum(x * x))

    def _start_round(self, t, x):
        self.round_index += 1
        self.round_start = t
        self.phase = TEST
        self.n1_r = pick_candidate(self.n1_set, self.cand_rng)
        self._open_interval(t, self.n_c, self.n1_r, x)

    def _record_round(self, phi):
        if self.n_rounds == self.history.shape[0]:
            grown = np.zeros((2 * self.history.shape[0], 8))
            grown[: self.n_rounds] = self.history
            self.history = grown
        row = self.history[self.n_rounds]
        row[H_ROUND] = self.round_index
        row[H_START] = self.round_start
        row[H_N1_R] = self.n1_r
        row[H_PHI_R] = self.phi_r
        row[H_N1] = self.n1
        row[H_N3] = self.n3
        row[H_PHI] = phi
        row[H_ADOPTED] = 1.0 if self.adopted else 0.0
        self.n_rounds += 1

    def _close_interval(self, t, x):
        phi = self._interval_phi()
        if self.phase == TEST:
            self.phi_r = phi
            self.adopted = phi > self.phi_prev + self.alpha
            self.n1, self.n3 = apply_update_rule(phi, self.phi_prev, self.n1, self.n1_r, self.n3, self.alpha, self.l1)
            self.phase = UPDATE
            self._open_interval(t, self.n3 * self.n_c, self.n1, x)
        else:
            self.phi_prev = phi
            self._record_round(phi)
            self._start_round(t, x)

    def tick(self, t, x, s, rng):
        if t <= self.last_t:
            raise ClockRegression("slot index must strictly increase")
        self.last_t = t
        if not self.started:
            self.started = True
            self._start_round(t, x)
        elif t >= self.interval_start + self.interval_len:
            self._close_interval(t, x)
        if (t - self.interval_start) % self.frame_len == 0:
            if self.has_pending:
                self.in_use = self.pending
                self.in_use_snap_t = self.pending_snap_t
            self.x_snap[:] = x
            self.s_snap = s
            self.snap_t = t
            self.pending = run_suboptimal_kernel(
                self.kind, self.params, self.h, x[0], x[1],
                self.gains[s, 0], self.gains[s, 1], self.frame_len, self.n0, self.pt, rng,
            )
            self.pending_snap_t = t
            self.has_pending = True
        d1, d2 = rates_kernel(self.gains[s, 0], self.gains[s, 1], self.in_use, self.n0, self.pt)
        self.acc += x[0] * d1 + x[1] * d2
        return self.in_use


@jitclass(_common + [("n1", nb.int64)])
class StaticController:
    def __init__(self, gains, n0, pt, kind, params, h, n1):
        self.gains = gains
        self.n0 = n0
        self.pt = pt
        self.kind = kind
        self.params = params
        self.h = h
        self.n1 = n1
        self.frame_len = n1
        self.last_t = -1
        self.started = False
        self.interval_start = 0
        self.in_use = 0.5 * pt
        self.pending = 0.5 * pt
        self.has_pending = False
        self.x_snap = np.zeros(gains.shape[1])
        self.s_snap = -1
        self.snap_t = -1
        self.in_use_snap_t = -1
        self.pending_snap_t = -1

    def tick(self, t, x, s, rng):
        if t <= self.last_t:
            raise ClockRegression("slot index must strictly increase")
        self.last_t = t
        if not self.started:
            self.started = True
            self.interval_start = t
        if (t - self.interval_start) % self.frame_len == 0:
            if self.has_pending:
                self.in_use = self.pending
                self.in_use_snap_t = self.pending_snap_t
            self.x_snap[:] = x
            self.s_snap = s
            self.snap_t = t
            self.pending = run_suboptimal_kernel(
                self.kind, self.params, self.h, x[0], x[1],
                self.gains[s, 0], self.gains[s, 1], self.frame_len, self.n0, self.pt, rng,
            )
            self.pending_snap_t = t
            self.has_pending = True
        return self.in_use


@jitclass(
    [
        ("gains", nb.float64[:, :]),
        ("n0", nb.float64),
        ("pt", nb.float64),
        ("last_t", nb.int64),
        ("frame_len", nb.int64),
    ]
)
class OracleController:
    """Exact max-weight schedule for the current slot, no lag."""

    def __init__(self, gains, n0, pt):
        self.gains = gains
        self.n0 = n0
        self.pt = pt
        self.last_t = -1
        self.frame_len = 0

    def tick(self, t, x, s, rng):
        if t <= self.last_t:
            raise ClockRegression("slot index must strictly increase")
        self.last_t = t
        p, _ = solve_exact_kernel(x[0], x[1], self.gains[s, 0], self.gains[s, 1], self.n0, self.pt)
        return p


def _gains(channel: ChannelModel) -> np.ndarray:
    if channel.n_users != 2:
        raise ValueError("the rate model supports exactly two users")
    return np.ascontiguousarray(channel.states, dtype=np.float64)


def new_dcp_state(config: DcpConfig, channel: ChannelModel, rates: RateModel, candidate_rng: np.random.Generator) -> DcpController:
    kind, params, h = encode_variant(config.variant)
    return DcpController(
        _gains(channel), float(rates.n0), float(rates.p_total), kind, params, h,
        config.n_c, float(config.alpha), config.l1, np.asarray(config.n1_set, dtype=np.int64), candidate_rng,
    )


def new_static_state(n1: int, variant: AlgorithmVariant, channel: ChannelModel, rates: RateModel) -> StaticController:
    if n1 < 1:
        raise ValueError(f"frame length must be >= 1, got {n1}")
    kind, params, h = encode_variant(variant)
    return StaticController(_gains(channel), float(rates.n0), float(rates.p_total), kind, params, h, n1)


def new_oracle_state(channel: ChannelModel, rates: RateModel) -> OracleController:
    return OracleController(_gains(channel), float(rates.n0), float(rates.p_total))


def dcp_tick(state: DcpController, t: int, X, s: int, rng: np.random.Generator) -> float:
    return state.tick(t, np.asarray(X, dtype=np.float64), s, rng)


def static_tick(state: StaticController, t: int, X, s: int, rng: np.random.Generator) -> float:
    return state.tick(t, np.asarray(X, dtype=np.float64), s, rng)


def round_history(state: DcpController) -> np.ndarray:
    """Completed rounds, one row per round; columns in ``HISTORY_COLUMNS``."""
    return state.history[: state.n_rounds].copy()
