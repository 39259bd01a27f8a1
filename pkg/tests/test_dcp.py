from __future__ import annotations

import math

import numpy as np
import pytest

from dcpsim.dcp import (
    H_ADOPTED,
    H_N3,
    H_PHI_R,
    H_START,
    TEST,
    DcpConfig,
    DcpController,
    StaticPolicy,
    apply_update_rule,
    dcp_tick,
    new_dcp_state,
    new_static_state,
    pick_candidate,
    round_history,
    static_tick,
)
from dcpsim.errors import ClockRegression
from dcpsim.sim import ArrivalProcess, run_sim
from dcpsim.solver import GapDecay, encode_variant, run_suboptimal


def test_update_rule_examples():
    assert apply_update_rule(0.50, 0.40, 2, 4, 8, 0.06, 32) == (4, 4)
    assert apply_update_rule(0.46, 0.40, 2, 4, 8, 0.06, 32) == (2, 16)
    assert apply_update_rule(0.50, 0.40, 2, 4, 1, 0.06, 32)[1] == 1
    assert apply_update_rule(0.30, 0.40, 2, 4, 32, 0.06, 32)[1] == 32


def test_pick_candidate_uniform():
    rng = np.random.default_rng(0)
    cands = np.array([1, 2, 3, 4, 5, 6], dtype=np.int64)
    draws = np.array([pick_candidate(cands, rng) for _ in range(60_000)])
    freq = np.bincount(draws, minlength=7)[1:] / len(draws)
    np.testing.assert_allclose(freq, 1 / 6, atol=0.01)
    assert pick_candidate(np.array([3], dtype=np.int64), rng) == 3


def test_config_validation():
    v = GapDecay(1.7)
    with pytest.raises(ValueError):
        DcpConfig(12000, 0.06, 24, (1, 2), v)
    with pytest.raises(ValueError):
        DcpConfig(12000, 0.06, 32, (7,), v)
    with pytest.raises(ValueError):
        DcpConfig(12000, 0.0, 32, (1,), v)
    assert DcpConfig(12000, math.inf, 32, (1, 2, 3), v).delta == pytest.approx(1 / 3)


def _drive(ctl, channel, xs, states, seed=0, tick=dcp_tick):
    rng = np.random.default_rng(seed)
    out = []
    for t, (x, s) in enumerate(zip(xs, states)):
        out.append(tick(ctl, t, x, s, rng))
    return out


def test_trace_method_one_lag(ex1_channel, ex1_rates):
    cfg = DcpConfig(4, math.inf, 1, (2,), GapDecay(1.7))
    ctl = new_dcp_state(cfg, ex1_channel, ex1_rates, np.random.default_rng(1))
    xs = [np.array([3.0, 1.0]), np.array([2.0, 5.0]), np.array([4.0, 4.0]), np.array([1.0, 9.0])]
    states = [0, 1, 1, 0]
    used = _drive(ctl, ex1_channel, xs, states, seed=7)
    assert used[0] == used[1] == 25.0  # first frame: midpoint split
    expect = run_suboptimal(GapDecay(1.7), xs[0], ex1_channel.states[0], 2, ex1_rates, np.random.default_rng(7))
    assert used[2] == used[3] == expect.p1


def test_static_unit_frame_uses_previous_slot(ex1_channel, ex1_rates):
    ctl = new_static_state(1, GapDecay(1.7), ex1_channel, ex1_rates)
    g = np.random.default_rng(3)
    xs = [g.random(2) * 10 for _ in range(50)]
    states = list(g.integers(0, 2, 50))
    used = _drive(ctl, ex1_channel, xs, states, seed=9, tick=static_tick)
    ref = np.random.default_rng(9)
    expected = [25.0] + [
        run_suboptimal(GapDecay(1.7), xs[t - 1], ex1_channel.states[states[t - 1]], 1, ex1_rates, ref).p1
        for t in range(1, 50)
    ]
    assert used == expected


def test_static_frame_boundaries(ex1_channel, ex1_rates):
    ctl = new_static_state(3, GapDecay(1.7), ex1_channel, ex1_rates)
    rng = np.random.default_rng(0)
    snaps = []
    for t in range(30):
        static_tick(ctl, t, np.array([1.0, 2.0]), t % 2, rng)
        snaps.append(ctl.snap_t)
    assert sorted(set(snaps)) == list(range(0, 30, 3))


def test_clock_regression(ex1_channel, ex1_rates):
    ctl = new_dcp_state(DcpConfig(4, 0.1, 2, (1, 2), GapDecay(1.7)), ex1_channel, ex1_rates, np.random.default_rng(0))
    rng = np.random.default_rng(0)
    dcp_tick(ctl, 5, np.ones(2), 0, rng)
    with pytest.raises(ClockRegression):
        dcp_tick(ctl, 5, np.ones(2), 0, rng)
    st = new_static_state(2, GapDecay(1.7), ex1_channel, ex1_rates)
    static_tick(st, 3, np.ones(2), 0, rng)
    with pytest.raises(ClockRegression):
        static_tick(st, 2, np.ones(2), 0, rng)


def test_zero_backlog_gives_zero_phi(ex1_channel, ex1_rates):
    cfg = DcpConfig(6, 0.01, 2, (1, 2, 3), GapDecay(1.7))
    ctl = new_dcp_state(cfg, ex1_channel, ex1_rates, np.random.default_rng(2))
    n = 200
    _drive(ctl, ex1_channel, [np.zeros(2)] * n, [t % 2 for t in range(n)])
    hist = round_history(ctl)
    assert len(hist) > 3
    assert np.all(hist[:, H_PHI_R] == 0.0)


def _random_run(ctl, n, seed):
    """Drive ``ctl`` with a random walk backlog and check invariants every slot."""
    g = np.random.default_rng(seed)
    rng = np.random.default_rng(seed + 1)
    x = np.array([50.0, 50.0])
    frame_starts = []
    for t in range(n):
        s = int(g.integers(0, 2))
        prev_snap = ctl.snap_t
        dcp_tick(ctl, t, x, s, rng)
        assert ctl.frame_len * ctl.n2 == ctl.n_c
        assert ctl.n3 & (ctl.n3 - 1) == 0 and 1 <= ctl.n3 <= ctl.l1
        elapsed = t - ctl.interval_start
        if ctl.phase == TEST:
            assert ctl.interval_len == ctl.n_c and elapsed < ctl.n_c
            assert t - ctl.round_start < ctl.n_c
        else:
            assert ctl.interval_len == ctl.n3 * ctl.n_c and elapsed < ctl.interval_len
        if ctl.snap_t != prev_snap:
            frame_starts.append((t, ctl.frame_len))
            assert (t - ctl.interval_start) % ctl.frame_len == 0
            if len(frame_starts) == 1:
                assert ctl.in_use_snap_t == -1
            else:
                # schedule in use was computed at the previous frame start
                assert ctl.in_use_snap_t == frame_starts[-2][0]
        x = np.maximum(x + g.normal(0, 1, 2), 0.0)
    return frame_starts


def test_state_machine_invariants_and_lag(ex1_channel, ex1_rates):
    cfg = DcpConfig(12, 0.02, 4, (1, 2, 3, 4, 6), GapDecay(1.7))
    ctl = new_dcp_state(cfg, ex1_channel, ex1_rates, np.random.default_rng(4))
    starts = _random_run(ctl, 5000, 11)
    # N_c is a multiple of every N1, so frames stay whole across interval seams
    for (t0, l0), (t1, _) in zip(starts, starts[1:]):
        assert t1 - t0 == l0


def test_interval_lengths(ex1_channel, ex1_rates):
    cfg = DcpConfig(12, 0.02, 8, (1, 2, 3, 4, 6), GapDecay(1.7))
    ctl = new_dcp_state(cfg, ex1_channel, ex1_rates, np.random.default_rng(5))
    _random_run(ctl, 8000, 12)
    h = round_history(ctl)
    lengths = np.diff(h[:, H_START])
    np.testing.assert_array_equal(lengths, cfg.n_c * (1 + h[:-1, H_N3]))


def test_n3_doubles_without_adoption(ex1_channel, ex1_rates):
    cfg = DcpConfig(4, math.inf, 16, (1, 2), GapDecay(1.7))
    ctl = new_dcp_state(cfg, ex1_channel, ex1_rates, np.random.default_rng(6))
    _random_run(ctl, 4 * (2 + 3 + 5 + 9 + 17 + 17 + 17), 13)
    h = round_history(ctl)
    np.testing.assert_array_equal(h[:, H_N3], [2, 4, 8, 16, 16, 16])
    assert np.all(h[:, H_ADOPTED] == 0)


def test_n3_stays_at_one_when_always_adopting(ex1_channel, ex1_rates):
    kind, params, hh = encode_variant(GapDecay(1.7))
    ctl = DcpController(
        np.ascontiguousarray(ex1_channel.states), 10.0, 50.0, kind, params, hh,
        4, -math.inf, 16, np.array([1, 2], dtype=np.int64), np.random.default_rng(7),
    )
    _random_run(ctl, 400, 14)
    h = round_history(ctl)
    assert len(h) == 400 // 8 - 1
    assert np.all(h[:, H_N3] == 1)
    assert np.all(h[:, H_ADOPTED] == 1)


def test_dcp_single_candidate_equals_static(ex1_channel, ex1_rates):
    arr = ArrivalProcess((2.4181 * 0.8, 2.4181 * 0.8))
    for k in (1, 3):
        a = run_sim(ex1_channel, ex1_rates, DcpConfig(120, math.inf, 4, (k,), GapDecay(1.7)), arr, 50_000, 3, 1000)
        b = run_sim(ex1_channel, ex1_rates, StaticPolicy(k, GapDecay(1.7)), arr, 50_000, 3, 1000)
        np.testing.assert_array_equal(a.mean_total, b.mean_total)
        np.testing.assert_array_equal(a.x_final, b.x_final)


def test_dcp_single_candidate_trace_equals_static(ex1_channel, ex1_rates):
    g = np.random.default_rng(0)
    xs = [g.random(2) * 100 for _ in range(500)]
    states = list(g.integers(0, 2, 500))
    dcp = new_dcp_state(DcpConfig(12, math.inf, 4, (3,), GapDecay(1.7)), ex1_channel, ex1_rates, np.random.default_rng(1))
    st = new_static_state(3, GapDecay(1.7), ex1_channel, ex1_rates)
    assert _drive(dcp, ex1_channel, xs, states, 5) == _drive(st, ex1_channel, xs, states, 5, static_tick)


@pytest.mark.parametrize("c", [2.0, 1024.0, 0.25])
def test_phi_scale_invariance(ex1_channel, ex1_rates, c):
    cfg = DcpConfig(60, 0.02, 2, (1, 2, 3), GapDecay(1.7))
    g = np.random.default_rng(8)
    states = list(g.integers(0, 2, 600))
    X = np.array([3.0, 7.0])
    hist = []
    for scale in (1.0, c):
        ctl = new_dcp_state(cfg, ex1_channel, ex1_rates, np.random.default_rng(2))
        _drive(ctl, ex1_channel, [scale * X] * 600, states, seed=4)
        hist.append(round_history(ctl))
    np.testing.assert_allclose(hist[0][:, H_PHI_R], hist[1][:, H_PHI_R], rtol=1e-12)
    np.testing.assert_array_equal(hist[0][:, H_N3], hist[1][:, H_N3])
