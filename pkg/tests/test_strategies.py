import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adpp.problem import ProblemSpec
from adpp.strategies import (StrategyCapExceeded, build_cover_tables, build_reward_matrix, decode_strategy,
                             encode_strategy, expected_value, strategy_cost_tables, strategy_count)


def spec_of(state_cards, action_cards, K=1, costs=None):
    nA, nS = int(np.prod(action_cards)), int(np.prod(state_cards))
    if costs is None:
        costs = np.zeros((K + 1, nA, nS))
    return ProblemSpec(state_cards, action_cards, costs, np.zeros(K), np.ones(K + 1), -np.ones(K + 1))


@pytest.mark.parametrize("states,actions,F", [((2,), (2,), 4), ((4, 4, 4), (2, 2, 2), 4096),
                                              ((3, 2), (1, 1), 1), ((2, 3), (3, 2), 9 * 8)])
def test_strategy_count(states, actions, F):
    assert strategy_count(spec_of(states, actions)) == F


def test_strategy_cap():
    spec = spec_of((4, 4, 4), (2, 2, 2))
    with pytest.raises(StrategyCapExceeded):
        strategy_count(spec, cap=4095)
    big = spec_of((8, 8, 8), (4, 4, 4))
    with pytest.raises(StrategyCapExceeded):
        strategy_cost_tables(big)


def test_decode_extremes():
    spec = spec_of((2, 3), (3, 2))
    F = strategy_count(spec)
    assert decode_strategy(0, spec).tables == ((0, 0), (0, 0, 0))
    assert decode_strategy(F - 1, spec).tables == ((2, 2), (1, 1, 1))
    with pytest.raises(IndexError):
        decode_strategy(F, spec)
    with pytest.raises(IndexError):
        decode_strategy(-1, spec)


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_encode_decode_bijection(data):
    n = data.draw(st.integers(1, 3))
    states = tuple(data.draw(st.integers(1, 3)) for _ in range(n))
    actions = tuple(data.draw(st.integers(1, 3)) for _ in range(n))
    spec = spec_of(states, actions)
    m = data.draw(st.integers(0, strategy_count(spec) - 1))
    assert encode_strategy(decode_strategy(m, spec), spec) == m


def test_expected_value_point_mass(make_problem):
    rng = np.random.default_rng(1)
    spec = make_problem(rng, n_users=2, max_states=3, max_actions=2)
    tables = strategy_cost_tables(spec)
    for _ in range(20):
        s = int(rng.integers(spec.num_states))
        m = int(rng.integers(tables.shape[1]))
        k = int(rng.integers(spec.num_penalties + 1))
        lam = np.zeros(spec.num_states)
        lam[s] = 1.0
        assert expected_value(m, k, lam, spec) == tables[k, m, s]


def test_expected_value_identity_strategy():
    # s(w) = w, p0(a, w) = a * w, lam uniform -> 0.5
    costs = np.zeros((2, 2, 2))
    costs[0] = np.outer([0, 1], [0, 1])
    spec = spec_of((2,), (2,), costs=costs)
    m = encode_strategy(type(decode_strategy(0, spec))(((0, 1),)), spec)
    assert expected_value(m, 0, np.array([0.5, 0.5]), spec) == pytest.approx(0.5)


def test_sensor_all_ones_power(sensors):
    spec = sensors.spec
    F = strategy_count(spec)
    rng = np.random.default_rng(2)
    for lam in [sensors.limit, rng.dirichlet(np.ones(64))]:
        assert expected_value(F - 1, 1, lam, spec) == pytest.approx(1.0)


def test_sensor_all_zero_strategy_has_zero_cost(sensors):
    tab = build_reward_matrix(sensors.limit, sensors.spec)
    assert tab.rewards[0, 0] == 0.0
    assert tab.count == 4096 and tab.num_penalties == 3


def test_reward_matrix_matches_loop_oracle(make_problem):
    rng = np.random.default_rng(4)
    spec = make_problem(rng, n_users=3, max_states=2, max_actions=2, K=2)
    lam = rng.dirichlet(np.ones(spec.num_states))
    tab = build_reward_matrix(lam, spec)
    F = tab.count
    for _ in range(100):
        k, m = int(rng.integers(spec.num_penalties + 1)), int(rng.integers(F))
        assert tab.rewards[k, m] == pytest.approx(expected_value(m, k, lam, spec), abs=1e-12)


def test_sensor_reward_matrix_spot_checks(sensors):
    rng = np.random.default_rng(5)
    tab = build_reward_matrix(sensors.limit, sensors.spec)
    for _ in range(100):
        k, m = int(rng.integers(4)), int(rng.integers(4096))
        assert tab.rewards[k, m] == pytest.approx(expected_value(m, k, sensors.limit, sensors.spec), abs=1e-12)


def test_holder_bound(make_problem):
    rng = np.random.default_rng(6)
    for _ in range(20):
        spec = make_problem(rng, n_users=2, max_states=3, max_actions=2)
        l1, l2 = rng.dirichlet(np.ones(spec.num_states), size=2)
        d = np.abs(l1 - l2).sum()
        r1, r2 = build_reward_matrix(l1, spec).rewards, build_reward_matrix(l2, spec).rewards
        assert np.all(np.abs(r1 - r2) <= spec.b_max[:, None] * d + 1e-12)


def test_entrywise_bounds_and_linearity(make_problem):
    rng = np.random.default_rng(7)
    for _ in range(20):
        spec = make_problem(rng, n_users=2, max_states=3, max_actions=3)
        P = strategy_cost_tables(spec)
        l1, l2 = rng.dirichlet(np.ones(spec.num_states), size=2)
        a = rng.uniform()
        r1, r2 = build_reward_matrix(l1, spec).rewards, build_reward_matrix(l2, spec).rewards
        rmix = build_reward_matrix(a * l1 + (1 - a) * l2, spec).rewards
        np.testing.assert_allclose(rmix, a * r1 + (1 - a) * r2, atol=1e-12, rtol=0)
        assert np.all(P.min(axis=2) <= r1 + 1e-12) and np.all(r1 <= P.max(axis=2) + 1e-12)


def test_cover_tables_stack(sensors):
    tables = build_cover_tables(sensors.cover.members, sensors.spec)
    assert tables.shape == (8, 4, 4096)
    np.testing.assert_array_equal(tables[0], build_reward_matrix(sensors.cover.members[0], sensors.spec).rewards)
