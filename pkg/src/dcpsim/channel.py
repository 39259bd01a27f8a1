"""Finite-state Markov channel process.

A :class:`ChannelModel` holds the per-state gain magnitudes, the row-stochastic
transition matrix and its stationary distribution. Models are immutable once
built and can be shared between concurrent runs; each run owns its own RNG.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NonStochasticMatrix, Reducible

ROW_SUM_TOL = 1e-9
STATIONARY_TOL = 1e-12
MAX_POWER_ITERATIONS = 1_000_000


@dataclass(frozen=True, eq=False)
class ChannelModel:
    states: np.ndarray
    """(S, N) gain magnitudes |s_i| per state."""
    T: np.ndarray
    pi: np.ndarray
    cum_rows: np.ndarray = field(repr=False)
    cum_pi: np.ndarray = field(repr=False)
    _squares: list = field(default_factory=list, repr=False)

    @property
    def n_states(self) -> int:
        return self.T.shape[0]

    @property
    def n_users(self) -> int:
        return self.states.shape[1]

    def matrix_power(self, k: int) -> np.ndarray:
        """T^k by repeated squaring; the squares T^(2^j) are memoized."""
        if k < 0:
            raise ValueError(f"k must be >= 0, got {k}")
        result = np.eye(self.n_states)
        j = 0
        while k:
            if j == len(self._squares):
                prev = self._squares[-1] if self._squares else None
                self._squares.append(self.T.copy() if prev is None else prev @ prev)
            if k & 1:
                result = result @ self._squares[j]
            k >>= 1
            j += 1
        return result


def _is_irreducible(T: np.ndarray) -> bool:
    adj = T > 0

    def reach(a: np.ndarray) -> np.ndarray:
        seen = np.zeros(len(a), dtype=bool)
        seen[0] = True
        frontier = [0]
        while frontier:
            i = frontier.pop()
            for j in np.flatnonzero(a[i] & ~seen):
                seen[j] = True
                frontier.append(j)
        return seen

    return bool(reach(adj).all() and reach(adj.T).all())


def stationary_distribution(T: np.ndarray) -> np.ndarray:
    """Power iteration on the lazy chain (I + T)/2.

    The lazy chain shares T's stationary vector but is aperiodic, so the
    iteration also converges for periodic chains.
    """
    n = T.shape[0]
    lazy = 0.5 * (np.eye(n) + T)
    v = np.full(n, 1.0 / n)
    for _ in range(MAX_POWER_ITERATIONS):
        nxt = v @ lazy
        nxt /= nxt.sum()
        if np.abs(nxt @ T - nxt).sum() <= STATIONARY_TOL:
            return nxt
        v = nxt
    raise Reducible("power iteration did not converge to a unique stationary vector")


def new_markov(states, T) -> ChannelModel:
    states = np.array(states, dtype=float)
    T = np.array(T, dtype=float)
    if states.ndim == 1:
        states = states[:, None]
    if states.ndim != 2 or T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise DimensionMismatch(f"need a square T and a 2-d state list, got T{T.shape}, states{states.shape}")
    if T.shape[0] != states.shape[0]:
        raise DimensionMismatch(f"T is {T.shape[0]}x{T.shape[0]} but there are {states.shape[0]} states")
    if np.any(states <= 0):
        raise ValueError("gain magnitudes must be > 0")
    if np.any(T < 0) or np.any(T > 1):
        raise NonStochasticMatrix("transition probabilities must lie in [0, 1]")
    row_err = np.abs(T.sum(axis=1) - 1.0)
    if np.any(row_err > ROW_SUM_TOL):
        bad = int(np.argmax(row_err))
        raise NonStochasticMatrix(f"row {bad} sums to {T[bad].sum()!r}")
    T = T / T.sum(axis=1, keepdims=True)
    if not _is_irreducible(T):
        raise Reducible("transition graph has more than one communicating class")
    pi = stationary_distribution(T)

    cum_rows = np.cumsum(T, axis=1)
    cum_rows[:, -1] = 1.0
    cum_pi = np.cumsum(pi)
    cum_pi[-1] = 1.0
    for a in (states, T, pi, cum_rows, cum_pi):
        a.setflags(write=False)
    return ChannelModel(states=states, T=T, pi=pi, cum_rows=cum_rows, cum_pi=cum_pi)


def _draw(cum: np.ndarray, u: float) -> int:
    return min(int(np.searchsorted(cum, u, side="right")), len(cum) - 1)


def step(model: ChannelModel, current: int, rng: np.random.Generator) -> int:
    """Next state index; consumes exactly one ``rng.random()`` draw."""
    if not 0 <= current < model.n_states:
        raise IndexError(f"state index {current} out of range")
    return _draw(model.cum_rows[current], rng.random())


def sample_stationary(model: ChannelModel, rng: np.random.Generator) -> int:
    """Draw a state from pi with one ``rng.random()`` draw."""
    return _draw(model.cum_pi, rng.random())


def marginal_after(model: ChannelModel, s0: int, k: int) -> np.ndarray:
    """Distribution of the state k slots after starting in ``s0`` (row s0 of T^k)."""
    return model.matrix_power(k)[s0].copy()
