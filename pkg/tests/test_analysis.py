from __future__ import annotations

import math

import numpy as np
import pytest

from dcpsim.analysis import (
    DirectionGrid,
    RinfParams,
    capacity_boundary_along,
    capacity_support,
    chi_of,
    direction_table,
    lag_weights,
    n3_prime_update_sum,
    phi_estimates,
    phi_of,
    phi_tilde,
    r_infinity,
    theta_csv,
    theta_dcp_lower,
    theta_inf,
    theta_static,
    unit_direction,
)
from dcpsim.channel import new_markov
from dcpsim.dcp import new_static_state, static_tick
from dcpsim.errors import SideConditionViolated, TruncationInsufficient
from dcpsim.rates import rate_pair
from dcpsim.solver import GapDecay

from conftest import EX2_STATES, EX2_T

LN126 = math.log(126)
LN6 = math.log(6)


@pytest.fixture(scope="module")
def single_state():
    return new_markov([(1, 5)], [[1.0]])


@pytest.fixture(scope="module")
def ex1_table(ex1_channel, ex1_rates, ex1_variant):
    return direction_table(DirectionGrid.uniform(30), ex1_channel, ex1_rates, ex1_variant, range(1, 7), 4000, seed=3)


def test_direction_grid():
    g = DirectionGrid.uniform(180)
    assert len(g) == 181
    np.testing.assert_allclose(np.linalg.norm(g.directions, axis=1), 1.0, atol=1e-15)
    assert np.all(g.directions >= 0)
    np.testing.assert_array_equal(g.directions[0], [1, 0])
    np.testing.assert_array_equal(g.directions[-1], [0, 1])
    np.testing.assert_allclose(unit_direction(45), [2**-0.5, 2**-0.5])


def test_chi_examples(ex1_channel, ex1_rates):
    assert chi_of((1, 1), ex1_channel, ex1_rates) == pytest.approx(LN126 / math.sqrt(2), abs=1e-12)
    assert chi_of((1, 0), ex1_channel, ex1_rates) == pytest.approx((LN6 + LN126) / 2, abs=1e-12)
    assert chi_of((3, 3), ex1_channel, ex1_rates) == pytest.approx(chi_of((1, 1), ex1_channel, ex1_rates), rel=1e-15)


def test_capacity_support_examples(ex1_channel, ex1_rates):
    assert capacity_support((1, 1), ex1_channel, ex1_rates) == pytest.approx(LN126, abs=1e-12)
    assert capacity_support((1, 0), ex1_channel, ex1_rates) == pytest.approx((LN6 + LN126) / 2, abs=1e-12)
    assert capacity_support((0, 0), ex1_channel, ex1_rates) == 0.0


@pytest.mark.parametrize("c", [0.5, 2.0])
def test_support_homogeneity(ex1_channel, ex1_rates, c):
    for w in DirectionGrid.uniform(20).directions:
        h = capacity_support(w, ex1_channel, ex1_rates)
        assert capacity_support(c * w, ex1_channel, ex1_rates) == pytest.approx(c * h, rel=1e-12, abs=1e-12)


def test_boundary_examples(ex1_channel, ex1_rates):
    np.testing.assert_allclose(capacity_boundary_along((1, 1), ex1_channel, ex1_rates), [LN126 / 2] * 2, atol=1e-9)
    ch2 = new_markov(EX2_STATES, EX2_T)
    from dcpsim.rates import RateModel

    expect = (2 * LN6 + math.log(1.8)) / 6
    np.testing.assert_allclose(capacity_boundary_along((1, 1), ch2, RateModel(50, 10)), [expect] * 2, atol=1e-9)


def test_boundary_single_state(single_state, ex1_rates):
    np.testing.assert_allclose(capacity_boundary_along((0, 1), single_state, ex1_rates), [0, LN126], atol=1e-12)
    np.testing.assert_allclose(capacity_boundary_along((1, 0), single_state, ex1_rates), [LN6, 0], atol=1e-12)


def test_boundary_point_on_region_edge(ex1_channel, ex1_rates):
    # the returned point is feasible for every supporting halfplane and tight for one
    for ang in np.linspace(0.1, 1.4, 7):
        d = np.array([math.cos(ang), math.sin(ang)])
        a = capacity_boundary_along(d, ex1_channel, ex1_rates)
        slack = [capacity_support(w, ex1_channel, ex1_rates) - w @ a for w in DirectionGrid.uniform(180).directions]
        assert min(slack) == pytest.approx(0.0, abs=1e-12)
        assert min(slack) >= -1e-12


def test_lag_weights_rows(ex1_channel):
    for n1 in range(1, 7):
        W = lag_weights(ex1_channel, n1)
        np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-14)
    # N1 = 1 uses the state one slot after the snapshot
    np.testing.assert_allclose(lag_weights(ex1_channel, 1), ex1_channel.T, atol=1e-15)


def test_phi_single_state_exact_solver(single_state, ex1_rates):
    v = GapDecay(1e6)
    for n1 in range(1, 7):
        for X in [(1, 1), (1, 0), (0.2, 0.9)]:
            chi = chi_of(X, single_state, ex1_rates)
            assert phi_of(X, n1, single_state, ex1_rates, v, 2000, np.random.default_rng(0)) == pytest.approx(chi, abs=1e-5)
            if n1 >= 2:
                assert phi_of(X, n1, single_state, ex1_rates, v, 2000, np.random.default_rng(0)) == pytest.approx(chi, abs=1e-6)


def test_theta_inf_single_state(single_state, ex1_rates):
    value, _, _ = theta_inf(DirectionGrid.uniform(18), single_state, ex1_rates, GapDecay(1e6), [2, 3], 500, seed=0)
    assert 1 - 1e-3 < value <= 1 + 1e-12


def test_phi_scale_invariance(ex1_channel, ex1_rates, ex1_variant):
    X = np.array([0.3, 0.8])
    for c in (2.0, 0.37, 1e5):
        a = phi_estimates(X, [1, 3, 5], ex1_channel, ex1_rates, ex1_variant, 3000, np.random.default_rng(1))
        b = phi_estimates(c * X, [1, 3, 5], ex1_channel, ex1_rates, ex1_variant, 3000, np.random.default_rng(1))
        np.testing.assert_allclose(a[0], b[0], rtol=1e-12)


def test_phi_below_chi(ex1_table):
    t = ex1_table
    assert np.all(t.phi <= t.chi[:, None] + 3 * t.phi_se + 1e-12)


def test_phi_diagonal_decreasing_in_n1(ex1_channel, ex1_rates, ex1_variant):
    # at the diagonal both states share the optimum, so the lag cost dominates
    m, se = phi_estimates(unit_direction(45), range(1, 7), ex1_channel, ex1_rates, ex1_variant, 20_000, np.random.default_rng(11))
    assert np.all(np.diff(m) < -3 * se[1:])


def test_phi_tilde_properties(ex1_table, ex1_channel, ex1_rates, ex1_variant):
    t = ex1_table
    assert np.all(t.phi_tilde[:, None] >= t.phi)
    n1, val = phi_tilde((1, 2), ex1_channel, ex1_rates, ex1_variant, [4], 1000, np.random.default_rng(0))
    assert n1 == 4
    assert val == phi_of((1, 2), 4, ex1_channel, ex1_rates, ex1_variant, 1000, np.random.default_rng(0))


def test_theta_ordering(ex1_table):
    ts = ex1_table.theta_static_all()
    _, best = ex1_table.theta_static_best()
    inf, _ = ex1_table.theta_inf()
    assert np.all(ts <= best) and best <= inf <= 1.0


def test_theta_ordering_example2(ex2_cfg):
    t = direction_table(DirectionGrid.uniform(12), ex2_cfg.channel, ex2_cfg.rates, ex2_cfg.variant, range(1, 7), 2000)
    _, best = t.theta_static_best()
    assert np.all(t.theta_static_all() <= best) and best <= t.theta_inf()[0] <= 1.0


def test_theta_static_wrapper(ex1_channel, ex1_rates, ex1_variant, ex1_table):
    g = DirectionGrid.uniform(30)
    assert theta_static(3, g, ex1_channel, ex1_rates, ex1_variant, 4000, seed=3) == pytest.approx(
        ex1_table.theta_static(3), abs=1e-12
    )


def test_axis_swap_symmetry(ex1_table):
    t = ex1_table
    diff = t.phi - t.phi[::-1]
    se = np.hypot(t.phi_se, t.phi_se[::-1])
    assert np.all(np.abs(diff) <= 4 * se + 1e-12)
    np.testing.assert_allclose(t.chi, t.chi[::-1], atol=1e-12)


@pytest.mark.parametrize("deg,n1", [(45.0, 3), (20.0, 2), (70.0, 5)])
def test_phi_matches_frozen_backlog_simulation(ex1_channel, ex1_rates, ex1_variant, deg, n1):
    """Independent oracle: time average of the real static controller with X held fixed."""
    X = unit_direction(deg)
    est, se = phi_estimates(X, [n1], ex1_channel, ex1_rates, ex1_variant, 100_000, np.random.default_rng(5))
    ctl = new_static_state(n1, ex1_variant, ex1_channel, ex1_rates)
    rng_ch, rng_pol = np.random.default_rng(6), np.random.default_rng(7)
    n = 120_000
    s = 0
    vals = np.empty(n)
    for t in range(n):
        s = int(np.searchsorted(ex1_channel.cum_rows[s], rng_ch.random(), side="right")) if t else 0
        p = static_tick(ctl, t, X, s, rng_pol)
        d = rate_pair(ex1_rates, ex1_channel.states[s], p)
        vals[t] = X[0] * d[0] + X[1] * d[1]
    batches = vals[1000:].reshape(-1, 1000).mean(axis=1)
    sim_mean = batches.mean()
    sim_se = batches.std(ddof=1) / math.sqrt(len(batches))
    assert abs(sim_mean - est[0]) <= 4 * math.hypot(sim_se, se[0])


def test_r_infinity_limits():
    assert r_infinity(RinfParams(0.2, 1e-9, 32)) == pytest.approx(32 / 33, abs=1e-3)
    assert r_infinity(RinfParams(0.3, 1e-9, 1)) == pytest.approx(0.5, abs=1e-3)
    assert r_infinity(RinfParams(0.2, 0.0, 32)) == 32 / 33


def test_r_infinity_monotone():
    l1s = [1, 2, 4, 8, 32]
    rhos = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2]
    R = np.array([[r_infinity(RinfParams(0.5, r, l)) for r in rhos] for l in l1s])
    assert np.all(np.diff(R, axis=0) >= 0)
    assert np.all(np.diff(R, axis=1) <= 1e-15)
    assert np.all((R > 0) & (R < 1))


def test_r_infinity_nonincreasing_in_rho_wide():
    rhos = [1e-4, 0.01, 0.05, 0.1, 0.3]
    for l1 in [1, 2, 4, 8, 32]:
        R = [r_infinity(RinfParams(0.5, r, l1)) for r in rhos]
        assert np.all(np.diff(R) <= 0)


def test_r_infinity_decreases_with_l1_when_rho_large():
    # with frequent concentration failures the bad rounds, which run at
    # N3 = L1, dominate; a larger L1 then lowers the fraction
    assert r_infinity(RinfParams(0.5, 0.3, 32)) < r_infinity(RinfParams(0.5, 0.3, 1))


def test_n3_prime_sums():
    assert [n3_prime_update_sum(b, 4) for b in range(6)] == [0, 1, 3, 5, 9, 13]


def test_r_infinity_truncation_and_validation():
    with pytest.raises(TruncationInsufficient):
        r_infinity(RinfParams(0.5, 0.1, 2**1000))
    with pytest.raises(ValueError):
        RinfParams(0.0, 0.1, 32)
    with pytest.raises(ValueError):
        RinfParams(0.5, 1.0, 32)
    with pytest.raises(ValueError):
        RinfParams(0.5, 0.1, 24)
    with pytest.raises(ValueError):
        RinfParams(0.5, 0.1, 32, k_max=10)


def test_theta_dcp_lower(ex1_channel, ex1_rates, ex1_variant):
    table = direction_table(DirectionGrid.uniform(90), ex1_channel, ex1_rates, ex1_variant, range(1, 7), 10_000, seed=1)
    params = RinfParams(1 / 6, 1e-12, 32)
    val = theta_dcp_lower(1e-9, 0.0, params, table)
    assert val == pytest.approx(32 / 33 * 0.9447, abs=0.012)
    alphas = [0.01, 0.05, 0.1, 0.2, 0.4]
    vals = [theta_dcp_lower(a, 0.0, params, table) for a in alphas]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    with pytest.raises(SideConditionViolated):
        theta_dcp_lower(0.06, 0.01, params, table)
    with pytest.raises(SideConditionViolated):
        theta_dcp_lower(3.0, 0.0, params, table)


def test_theta_csv(ex1_table):
    lines = theta_csv(ex1_table).splitlines()
    assert lines[0] == "n1,theta_static"
    assert len(lines) == 8 and lines[-1].startswith("theta_inf,")
