"""Slotted queueing simulation driven by a runtime controller.

Each slot: the channel moves (stationary draw at slot 0), the controller
returns the schedule in use, rates are evaluated at the *current* channel
state, arrivals are drawn, and the queues are updated.

Randomness is split into independent streams spawned from the run seed:
channel, solver, arrivals and DCP candidate selection, in that spawn order.
Two runs with the same seed therefore see identical channel and arrival
sample paths whatever the policy.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from numba import njit

from .channel import ChannelModel
from .dcp import (
    DcpConfig,
    OraclePolicy,
    StaticPolicy,
    new_dcp_state,
    new_oracle_state,
    new_static_state,
    round_history,
)
from .errors import RateExceedsBound, TooFewSamples
from .rates import RateModel, rates_kernel

DEFAULT_WINDOW = 10_000
DEFAULT_A_MAX = 8.0
CSV_COLUMNS = ("t_window_end", "mean_total_queue", "mean_q1", "mean_q2", "current_N1")

PolicySpec = Union[DcpConfig, StaticPolicy, OraclePolicy]


@dataclass(frozen=True)
class ArrivalProcess:
    """I.i.d. Bernoulli batches: A_i = a_max with probability mean_i / a_max, else 0."""

    mean: tuple[float, ...]
    a_max: float = DEFAULT_A_MAX

    def __post_init__(self):
        if not self.a_max > 0:
            raise ValueError(f"a_max must be > 0, got {self.a_max}")
        for i, a in enumerate(self.mean):
            if a < 0:
                raise ValueError(f"mean arrival rate {i} is negative: {a}")
            if a > self.a_max:
                raise RateExceedsBound(f"mean arrival rate {i} = {a} exceeds a_max = {self.a_max}")

    @property
    def prob(self) -> np.ndarray:
        return np.asarray(self.mean, dtype=float) / self.a_max

    def scaled(self, gamma: float) -> "ArrivalProcess":
        return ArrivalProcess(tuple(gamma * a for a in self.mean), self.a_max)


def arrivals_sample(proc: ArrivalProcess, rng: np.random.Generator) -> np.ndarray:
    """One arrival vector; one ``rng.random()`` draw per queue."""
    p = proc.prob
    return np.array([proc.a_max if rng.random() < p[i] else 0.0 for i in range(len(p))])


def queue_step(X, A, D):
    """Queue recursion X' = max(0, X + A - D) with wasted service U.

    ``X' == (X + A - D) + U`` holds exactly in floating point.
    """
    X = np.asarray(X, dtype=float)
    A = np.asarray(A, dtype=float)
    D = np.asarray(D, dtype=float)
    avail = X + A
    x_next = np.maximum(avail - D, 0.0)
    waste = D - np.minimum(D, avail)
    return x_next, waste


class Verdict(str, enum.Enum):
    STABLE = "Stable"
    UNSTABLE = "Unstable"
    INCONCLUSIVE = "Inconclusive"


@dataclass
class SimMetrics:
    seed: int
    horizon: int
    window: int
    t_window_end: np.ndarray
    mean_total: np.ndarray
    mean_q: np.ndarray
    current_n1: np.ndarray
    final_mean_queue: np.ndarray
    n1_histogram: dict
    rounds: np.ndarray
    x0: np.ndarray
    x_final: np.ndarray
    cum_arrivals: np.ndarray
    cum_departures: np.ndarray
    cum_waste: np.ndarray
    max_departure: np.ndarray
    max_arrival: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def n_slots(self) -> int:
        return self.horizon

    def to_csv(self, path: Union[str, Path, None] = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for i in range(len(self.t_window_end)):
            w.writerow(
                [
                    int(self.t_window_end[i]),
                    repr(float(self.mean_total[i])),
                    repr(float(self.mean_q[i, 0])),
                    repr(float(self.mean_q[i, 1])),
                    int(self.current_n1[i]),
                ]
            )
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def read_queue_csv(path: Union[str, Path]) -> tuple[np.ndarray, np.ndarray]:
    """(t_window_end, mean_total_queue) columns of a per-run CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    t = np.array([int(r["t_window_end"]) for r in rows], dtype=np.int64)
    y = np.array([float(r["mean_total_queue"]) for r in rows])
    return t, y


@njit(cache=True)
def _draw(cum, u):
    k = np.searchsorted(cum, u, side="right")
    if k >= cum.shape[0]:
        k = cum.shape[0] - 1
    return k


@njit
def _simulate(policy, cum_rows, cum_pi, gains, n0, pt, a_prob, a_max, x0, horizon, window, rng_ch, rng_pol, rng_arr):
    n = x0.shape[0]
    n_win = horizon // window
    win_total = np.zeros(n_win)
    win_q = np.zeros((n_win, n))
    win_n1 = np.zeros(n_win, dtype=np.int64)
    n1_hist = np.zeros(1025, dtype=np.int64)
    sum_q = np.zeros(n)
    cum_a = np.zeros(n)
    cum_d = np.zeros(n)
    cum_u = np.zeros(n)
    max_d = np.zeros(n)
    max_a = np.zeros(n)
    x = x0.copy()
    acc_q = np.zeros(n)
    s = 0
    for t in range(horizon):
        if t == 0:
            s = _draw(cum_pi, rng_ch.random())
        else:
            s = _draw(cum_rows[s], rng_ch.random())
        p1 = policy.tick(t, x, s, rng_pol)
        d1, d2 = rates_kernel(gains[s, 0], gains[s, 1], p1, n0, pt)
        fl = policy.frame_len
        if fl < n1_hist.shape[0]:
            n1_hist[fl] += 1
        for i in range(n):
            acc_q[i] += x[i]
            sum_q[i] += x[i]
        for i in range(n):
            a = a_max if rng_arr.random() < a_prob[i] else 0.0
            d = d1 if i == 0 else d2
            avail = x[i] + a
            u = d - min(d, avail)
            x[i] = max(avail - d, 0.0)
            cum_a[i] += a
            cum_d[i] += d
            cum_u[i] += u
            if d > max_d[i]:
                max_d[i] = d
            if a > max_a[i]:
                max_a[i] = a
        if (t + 1) % window == 0:
            w = (t + 1) // window - 1
            if w < n_win:
                tot = 0.0
                for i in range(n):
                    win_q[w, i] = acc_q[i] / window
                    tot += win_q[w, i]
                    acc_q[i] = 0.0
                win_total[w] = tot
                win_n1[w] = fl
    return win_total, win_q, win_n1, n1_hist, sum_q / horizon, x, cum_a, cum_d, cum_u, max_d, max_a


def _streams(seed: int) -> list[np.random.Generator]:
    return [np.random.default_rng(c) for c in np.random.SeedSequence(seed).spawn(4)]


def build_policy(policy: PolicySpec, channel: ChannelModel, rates: RateModel, candidate_rng: np.random.Generator):
    if isinstance(policy, DcpConfig):
        return new_dcp_state(policy, channel, rates, candidate_rng)
    if isinstance(policy, StaticPolicy):
        return new_static_state(policy.n1, policy.variant, channel, rates)
    if isinstance(policy, OraclePolicy):
        return new_oracle_state(channel, rates)
    raise TypeError(f"unknown policy {policy!r}")


def run_sim(
    channel: ChannelModel,
    rates: RateModel,
    policy: PolicySpec,
    arrivals: ArrivalProcess,
    horizon: int,
    seed: int,
    window: int = DEFAULT_WINDOW,
    x0: Sequence[float] | None = None,
) -> SimMetrics:
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if len(arrivals.mean) != channel.n_users:
        raise ValueError(f"{len(arrivals.mean)} arrival rates for {channel.n_users} users")
    x0 = np.zeros(channel.n_users) if x0 is None else np.array(x0, dtype=float)
    if x0.shape != (channel.n_users,) or np.any(x0 < 0):
        raise ValueError("x0 must be a nonnegative vector with one entry per user")
    rng_ch, rng_pol, rng_arr, rng_cand = _streams(seed)
    ctl = build_policy(policy, channel, rates, rng_cand)
    out = _simulate(
        ctl, channel.cum_rows, channel.cum_pi, np.ascontiguousarray(channel.states, dtype=np.float64),
        float(rates.n0), float(rates.p_total), arrivals.prob, float(arrivals.a_max), x0,
        int(horizon), int(window), rng_ch, rng_pol, rng_arr,
    )
    win_total, win_q, win_n1, n1_hist, final_mean, x_final, cum_a, cum_d, cum_u, max_d, max_a = out
    rounds = round_history(ctl) if isinstance(policy, DcpConfig) else np.zeros((0, 8))
    return SimMetrics(
        seed=seed,
        horizon=int(horizon),
        window=int(window),
        t_window_end=(np.arange(len(win_total), dtype=np.int64) + 1) * window,
        mean_total=win_total,
        mean_q=win_q,
        current_n1=win_n1,
        final_mean_queue=final_mean,
        n1_histogram={int(k): int(v) for k, v in enumerate(n1_hist) if v},
        rounds=rounds,
        x0=x0,
        x_final=x_final,
        cum_arrivals=cum_a,
        cum_departures=cum_d,
        cum_waste=cum_u,
        max_departure=max_d,
        max_arrival=max_a,
    )


MIN_VERDICT_SAMPLES = 20
VERDICT_BATCHES = 10
UNSTABLE_GROWTH = 0.1
STABLE_GROWTH = 0.01
SIGNIFICANCE = 3.0
STABLE_LAST_OVER_MEDIAN = 3.0


def _trend(t: np.ndarray, y: np.ndarray, n_batches: int) -> tuple[float, float]:
    """Growth across the span of ``t`` and its batch-means standard error.

    Windowed means of a queue are strongly autocorrelated, so the slope is
    fitted to ``n_batches`` contiguous batch averages, which are close to
    independent once a batch is much longer than the queue's relaxation time.
    """
    tb = np.array([b.mean() for b in np.array_split(t, n_batches)])
    yb = np.array([b.mean() for b in np.array_split(y, n_batches)])
    slope, icpt = np.polyfit(tb, yb, 1)
    resid = yb - (slope * tb + icpt)
    sxx = float(np.sum((tb - tb.mean()) ** 2))
    se = float(np.sqrt(np.sum(resid**2) / (n_batches - 2) / sxx))
    span = float(t[-1] - t[0])
    return float(slope) * span, se * span


def stability_verdict(metrics: Union[SimMetrics, Sequence[float]], t=None) -> Verdict:
    """Empirical stability call from windowed mean total queue samples.

    A line is fitted to batch averages of the last half of the samples; the
    growth it predicts across that half is compared with the run mean.
    Unstable: growth above 10% of the mean and at least three standard
    errors above zero. Stable: growth within 1% of the mean plus three
    standard errors, and the last sample under three times the run median.
    Anything else is Inconclusive.
    """
    if isinstance(metrics, SimMetrics):
        y = np.asarray(metrics.mean_total, dtype=float)
        t = metrics.t_window_end
    else:
        y = np.asarray(metrics, dtype=float)
    if len(y) < MIN_VERDICT_SAMPLES:
        raise TooFewSamples(f"need at least {MIN_VERDICT_SAMPLES} windowed samples, got {len(y)}")
    t = np.arange(1, len(y) + 1, dtype=float) if t is None else np.asarray(t, dtype=float)
    mean = float(np.mean(y))
    if mean == 0.0:
        return Verdict.STABLE
    half = len(y) // 2
    growth, se = _trend(t[half:], y[half:], VERDICT_BATCHES)
    if growth > UNSTABLE_GROWTH * mean and growth > SIGNIFICANCE * se:
        return Verdict.UNSTABLE
    if abs(growth) < STABLE_GROWTH * mean + SIGNIFICANCE * se and y[-1] < STABLE_LAST_OVER_MEDIAN * float(np.median(y)):
        return Verdict.STABLE
    return Verdict.INCONCLUSIVE
