import math

import numpy as np
import pytest

from adpp.lp import (FEAS_TOL, INFEASIBLE, OPTIMAL, LinearProgramInstance, brute_force_lp_oracle,
                     default_lipschitz_span, estimate_lipschitz, perturbed_value, solve_baseline, solve_lp,
                     theorem2_gap, value_grid)
from adpp.strategies import build_reward_matrix


def lp(r0, rk=(), c=()):
    r0 = np.asarray(r0, dtype=float)
    return LinearProgramInstance(r0, np.asarray(rk, dtype=float).reshape(-1, r0.size), np.asarray(c, dtype=float))


def random_instance(rng, F_max=6, K_max=2):
    F = int(rng.integers(1, F_max + 1))
    K = int(rng.integers(0, K_max + 1))
    rewards = rng.uniform(-1, 1, size=(K + 1, F))
    if rng.uniform() < 0.3:
        rewards = np.round(rewards, 1)  # encourage degeneracy and ties
    c = rng.uniform(-0.8, 0.6, size=K)
    return LinearProgramInstance.from_table(rewards, c)


def check_solution(inst, sol):
    assert sol.status == OPTIMAL
    th = sol.theta
    assert np.all(th >= 0)
    assert th.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(inst.constraint_matrix @ th <= inst.rhs + 1e-9)
    assert sol.value == pytest.approx(float(th @ inst.objective), abs=1e-9)
    assert sol.support.size <= inst.num_constraints + 1


def test_pick_cheaper_strategy():
    sol = solve_lp(lp([1, 2]))
    np.testing.assert_allclose(sol.theta, [1, 0])
    assert sol.value == 1.0
    assert brute_force_lp_oracle(lp([1, 2])).value == 1.0


def test_binding_constraint_splits_mass():
    sol = solve_lp(lp([0, 1], [[1, 0]], [0.5]))
    np.testing.assert_allclose(sol.theta, [0.5, 0.5], atol=1e-12)
    assert sol.value == pytest.approx(0.5)


def test_infeasible_detected_by_both():
    inst = lp([0, 1], [[1, 2]], [0.5])
    assert solve_lp(inst).status == INFEASIBLE
    assert brute_force_lp_oracle(inst).status == INFEASIBLE


def test_oracle_size_cap():
    with pytest.raises(ValueError):
        brute_force_lp_oracle(lp(np.zeros(9)))
    with pytest.raises(ValueError):
        brute_force_lp_oracle(lp(np.zeros(3), np.zeros((4, 3)), np.zeros(4)))


def test_instance_dimension_check():
    with pytest.raises(ValueError):
        LinearProgramInstance(np.zeros(3), np.zeros((2, 3)), np.zeros(1))
    with pytest.raises(ValueError):
        LinearProgramInstance(np.zeros(2), np.zeros((1, 2)), np.array([np.inf]))


def test_simplex_matches_oracle_random():
    rng = np.random.default_rng(2024)
    n_feasible = 0
    for _ in range(200):
        inst = random_instance(rng)
        a, b = solve_lp(inst), brute_force_lp_oracle(inst)
        assert a.status == b.status
        if a.status == OPTIMAL:
            n_feasible += 1
            assert abs(a.value - b.value) <= 1e-9
            check_solution(inst, a)
    assert n_feasible > 50


def test_simplex_matches_scipy_on_sensor_scenario(sensors):
    linprog = pytest.importorskip("scipy.optimize").linprog
    tab = build_reward_matrix(sensors.limit, sensors.spec)
    inst = LinearProgramInstance.from_table(tab, sensors.spec.constraints)
    sol = solve_lp(inst)
    check_solution(inst, sol)
    ref = linprog(inst.objective, A_ub=inst.constraint_matrix, b_ub=inst.rhs,
                  A_eq=np.ones((1, inst.num_vars)), b_eq=[1.0], bounds=(0, None), method="highs")
    assert sol.value == pytest.approx(ref.fun, abs=1e-9)


def test_solve_is_deterministic(sensors):
    tab = build_reward_matrix(sensors.limit, sensors.spec)
    inst = LinearProgramInstance.from_table(tab, sensors.spec.constraints)
    a, b = solve_lp(inst), solve_lp(inst)
    np.testing.assert_array_equal(a.theta, b.theta)


def test_G_examples():
    tab = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert perturbed_value(0.0, tab, [0.5]) == pytest.approx(solve_lp(lp([0, 1], [[1, 0]], [0.5])).value)
    assert perturbed_value(10.0, tab, [0.5]) == pytest.approx(0.0)
    assert perturbed_value(0.0, tab, [-0.1]) == math.inf
    with pytest.raises(ValueError):
        perturbed_value(-0.1, tab, [0.5])


def test_G_monotone_random():
    rng = np.random.default_rng(5)
    for _ in range(30):
        inst = random_instance(rng)
        tab = np.vstack([inst.objective, inst.constraint_matrix])
        _, g = value_grid(tab, inst.rhs, 1.0, 17)
        finite = g[np.isfinite(g)]
        assert np.all(np.diff(finite) <= 1e-12)
        # once feasible, stays feasible
        assert np.all(np.isfinite(g[np.argmax(np.isfinite(g)):])) or not np.isfinite(g).any()


def test_lipschitz_unconstrained_is_zero():
    tab = np.array([[0.0, 1.0], [0.1, 0.2]])
    assert estimate_lipschitz(tab, [5.0], x_max=1.0) == 0.0


def test_lipschitz_two_variable_example():
    # G(x) = 0.5 - x on [0, 0.5]
    tab = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert estimate_lipschitz(tab, [0.5], x_max=0.5, grid=64) == pytest.approx(1.0, abs=1e-9)


def test_lipschitz_grid_stability(sensors):
    tab = build_reward_matrix(sensors.limit, sensors.spec)
    c = sensors.spec.constraints
    span = default_lipschitz_span(tab, c)
    a = estimate_lipschitz(tab, c, span, 16)
    b = estimate_lipschitz(tab, c, span, 32)
    assert abs(a - b) <= 0.1 * max(a, b)


def test_lipschitz_requires_feasible_origin():
    with pytest.raises(ValueError):
        estimate_lipschitz(np.array([[0.0, 1.0], [1.0, 2.0]]), [0.5], x_max=0.1)
    with pytest.raises(ValueError):
        estimate_lipschitz(np.array([[0.0, 1.0], [1.0, 0.0]]), [0.5], x_max=0.1, grid=1)


@pytest.mark.parametrize("d,nu,b,c,gap", [(0, 0, 1, 1, 0.0), (0.1, 0.05, 1, 1, 0.3)])
def test_theorem2_gap_arithmetic(d, nu, b, c, gap):
    assert theorem2_gap(d, nu, b, c) == pytest.approx(gap)


def test_sensor_baseline(sensors):
    rep = solve_baseline(sensors.spec, sensors.limit, sensors.cover)
    assert -rep.p_opt == pytest.approx(0.1267, abs=5e-4)
    assert rep.i_star == 0 and rep.distance == 0.0
    assert rep.gap_holds
    # active facet of the sensor LP has slope 0.2 in the budget relaxation
    assert rep.lipschitz == pytest.approx(0.2, rel=1e-6)
    th = rep.limit_solution.theta
    assert rep.limit_solution.support.size <= 4
    assert th.sum() == pytest.approx(1.0, abs=FEAS_TOL)
