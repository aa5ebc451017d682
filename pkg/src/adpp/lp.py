"""Baseline linear program over mixtures of pure strategies.

    min_theta  sum_m theta_m r0[m]
    s.t.       sum_m theta_m rk[m] <= c_k + x,   k = 1..K
               sum_m theta_m = 1,  theta >= 0

Solved with a dense two-phase tableau simplex using Bland's rule, so the
pivot sequence (and therefore the returned vertex) is deterministic.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from .problem import CoveringSet, ProblemSpec, nearest_member
from .strategies import StrategyTable, build_reward_matrix, strategy_cost_tables

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

PIVOT_TOL = 1e-12
COST_TOL = 1e-11
FEAS_TOL = 1e-9


class IterationLimitExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class LinearProgramInstance:
    objective: np.ndarray          # (F,)
    constraint_matrix: np.ndarray  # (K, F)
    rhs: np.ndarray                # (K,)

    def __post_init__(self):
        obj = np.asarray(self.objective, dtype=float)
        a = np.asarray(self.constraint_matrix, dtype=float).reshape(-1, obj.size)
        b = np.asarray(self.rhs, dtype=float).reshape(-1)
        if a.shape[0] != b.size:
            raise ValueError(f"{a.shape[0]} constraint rows but {b.size} right-hand sides")
        if not (np.all(np.isfinite(obj)) and np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("LP data must be finite")
        object.__setattr__(self, "objective", obj)
        object.__setattr__(self, "constraint_matrix", a)
        object.__setattr__(self, "rhs", b)

    @property
    def num_vars(self) -> int:
        return self.objective.size

    @property
    def num_constraints(self) -> int:
        return self.rhs.size

    @classmethod
    def from_table(cls, table: StrategyTable | np.ndarray, constraints, x: float = 0.0):
        rewards = table.rewards if isinstance(table, StrategyTable) else np.asarray(table)
        return cls(rewards[0], rewards[1:], np.asarray(constraints, dtype=float) + x)


@dataclass(frozen=True)
class LpSolution:
    theta: np.ndarray | None
    value: float
    status: str
    iterations: int = 0

    @property
    def support(self) -> np.ndarray:
        if self.theta is None:
            return np.array([], dtype=int)
        return np.flatnonzero(self.theta > FEAS_TOL)


def _pivot(tab: np.ndarray, row: int, col: int) -> None:
    tab[row] /= tab[row, col]
    factor = tab[:, col].copy()
    factor[row] = 0.0
    tab -= np.outer(factor, tab[row])


def _run_simplex(tab: np.ndarray, basis: list[int], n_cols: int, max_iter: int) -> tuple[str, int]:
    """Minimise over the tableau in place; the last row holds reduced costs and -objective."""
    m = len(basis)
    for it in range(max_iter):
        reduced = tab[-1, :n_cols]
        candidates = np.flatnonzero(reduced < -COST_TOL)
        if candidates.size == 0:
            return OPTIMAL, it
        col = int(candidates[0])  # Bland: lowest index entering
        column = tab[:m, col]
        positive = np.flatnonzero(column > PIVOT_TOL)
        if positive.size == 0:
            return UNBOUNDED, it
        ratios = tab[positive, -1] / column[positive]
        best = ratios.min()
        tied = positive[ratios <= best + 1e-12 * max(1.0, abs(best))]
        # Bland: among tied rows, leave the lowest-index basic variable
        row = int(min(tied, key=lambda r: basis[r]))
        _pivot(tab, row, col)
        basis[row] = col
    raise IterationLimitExceeded(f"simplex exceeded {max_iter} pivots")


def solve_lp(lp: LinearProgramInstance, max_iter: int = 100_000) -> LpSolution:
    F, K = lp.num_vars, lp.num_constraints
    m = K + 1
    n_struct = F + K  # theta and slacks
    a = np.zeros((m, n_struct))
    a[:K, :F] = lp.constraint_matrix
    a[:K, F:] = np.eye(K)
    a[K, :F] = 1.0
    b = np.concatenate([lp.rhs, [1.0]])
    sign = np.where(b < 0, -1.0, 1.0)
    a *= sign[:, None]
    b = b * sign

    # phase 1 with one artificial per row
    n_cols = n_struct + m
    tab = np.zeros((m + 1, n_cols + 1))
    tab[:m, :n_struct] = a
    tab[:m, n_struct:n_cols] = np.eye(m)
    tab[:m, -1] = b
    tab[-1, :n_struct] = -a.sum(axis=0)
    tab[-1, -1] = -b.sum()
    basis = list(range(n_struct, n_cols))
    status, it1 = _run_simplex(tab, basis, n_cols, max_iter)
    if status != OPTIMAL:
        return LpSolution(None, math.nan, UNBOUNDED, it1)
    if -tab[-1, -1] > FEAS_TOL:
        return LpSolution(None, math.inf, INFEASIBLE, it1)

    # drive artificials out of the basis; drop redundant rows
    keep = []
    for r in range(m):
        if basis[r] >= n_struct:
            nz = np.flatnonzero(np.abs(tab[r, :n_struct]) > 1e-9)
            if nz.size:
                _pivot(tab, r, int(nz[0]))
                basis[r] = int(nz[0])
                keep.append(r)
        else:
            keep.append(r)
    body = tab[keep][:, list(range(n_struct)) + [n_cols]]
    basis = [basis[r] for r in keep]

    # phase 2
    cost = np.zeros(n_struct)
    cost[:F] = lp.objective
    tab2 = np.zeros((len(keep) + 1, n_struct + 1))
    tab2[:-1] = body
    tab2[-1, :n_struct] = cost
    for r, j in enumerate(basis):
        tab2[-1] -= cost[j] * tab2[r]
    status, it2 = _run_simplex(tab2, basis, n_struct, max_iter - it1)
    if status != OPTIMAL:
        return LpSolution(None, -math.inf, UNBOUNDED, it1 + it2)

    x = np.zeros(n_struct)
    for r, j in enumerate(basis):
        x[j] = tab2[r, -1]
    theta = np.clip(x[:F], 0.0, None)
    theta[theta < 1e-15] = 0.0
    value = float(theta @ lp.objective)
    return LpSolution(theta, value, OPTIMAL, it1 + it2)


def brute_force_lp_oracle(lp: LinearProgramInstance) -> LpSolution:
    """Best basic feasible solution by enumerating every basis. Tiny instances only."""
    F, K = lp.num_vars, lp.num_constraints
    if F > 8 or K > 3:
        raise ValueError(f"oracle limited to F <= 8 and K <= 3, got F={F}, K={K}")
    m = K + 1
    a = np.zeros((m, F + K))
    a[:K, :F] = lp.constraint_matrix
    a[:K, F:] = np.eye(K)
    a[K, :F] = 1.0
    b = np.concatenate([lp.rhs, [1.0]])
    best: LpSolution | None = None
    for cols in itertools.combinations(range(F + K), m):
        sub = a[:, cols]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        xb = np.linalg.solve(sub, b)
        if np.any(xb < -1e-10):
            continue
        theta = np.zeros(F)
        for c, v in zip(cols, xb):
            if c < F:
                theta[c] = max(v, 0.0)
        value = float(theta @ lp.objective)
        if best is None or value < best.value - 1e-12:
            best = LpSolution(theta, value, OPTIMAL)
    if best is None:
        return LpSolution(None, math.inf, INFEASIBLE)
    return best


def perturbed_value(x: float, table: StrategyTable | np.ndarray, constraints) -> float:
    """G(x): LP value with every constraint relaxed by x; +inf when infeasible."""
    if x < 0:
        raise ValueError("perturbation must be non-negative")
    sol = solve_lp(LinearProgramInstance.from_table(table, constraints, x))
    if sol.status == INFEASIBLE:
        return math.inf
    if sol.status != OPTIMAL:
        raise RuntimeError(f"LP status {sol.status}")
    return sol.value


def default_lipschitz_span(table: StrategyTable | np.ndarray, constraints) -> float:
    rewards = table.rewards if isinstance(table, StrategyTable) else np.asarray(table)
    c = np.asarray(constraints, dtype=float)
    if c.size == 0:
        return 1.0
    margin = float(np.min(c - rewards[1:].min(axis=1)))
    return 0.5 * margin if margin > 0 else 0.1


def value_grid(table, constraints, x_max: float, grid: int = 64) -> tuple[np.ndarray, np.ndarray]:
    xs = np.linspace(0.0, x_max, grid)
    return xs, np.array([perturbed_value(float(x), table, constraints) for x in xs])


def estimate_lipschitz(table: StrategyTable | np.ndarray, constraints, x_max: float | None = None,
                       grid: int = 64) -> float:
    """Largest secant slope of G over an even grid on [0, x_max]."""
    if grid < 2:
        raise ValueError("grid needs at least two points")
    if x_max is None:
        x_max = default_lipschitz_span(table, constraints)
    if x_max <= 0:
        raise ValueError("x_max must be positive")
    xs, g = value_grid(table, constraints, x_max, grid)
    if not np.isfinite(g[0]):
        raise ValueError("LP infeasible at x = 0; G is not defined there")
    return float(np.max(np.abs(np.diff(g)) / np.diff(xs)))


def theorem2_gap(d: float, nu: float, b_max: float, c_hat: float) -> float:
    """(c + 1) * b_max * (d + nu): allowed excess of the covering LP over the optimum."""
    if min(d, nu, b_max, c_hat) < 0:
        raise ValueError("gap inputs must be non-negative")
    return (c_hat + 1.0) * b_max * (d + nu)


@dataclass(frozen=True)
class BaselineReport:
    i_star: int
    distance: float
    cover_solution: LpSolution
    limit_solution: LpSolution
    lipschitz: float
    lipschitz_span: float
    nu: float
    b_max: float
    gap: float

    @property
    def p_opt(self) -> float:
        """Optimum of the limit LP, used as the operational p^(opt)."""
        return self.limit_solution.value

    @property
    def gap_holds(self) -> bool:
        return self.cover_solution.value < self.limit_solution.value + self.gap + 1e-9


def solve_baseline(spec: ProblemSpec, limit: np.ndarray, cover: CoveringSet, *, nu: float = 1e-3,
                   x_max: float | None = None, grid: int = 64,
                   cost_tables: np.ndarray | None = None) -> BaselineReport:
    """LP under the nearest cover member, LP under the limit, and the gap check between them."""
    if cost_tables is None:
        cost_tables = strategy_cost_tables(spec)
    i_star, d = nearest_member(cover, limit)
    cover_table = build_reward_matrix(cover.members[i_star], spec, cost_tables=cost_tables)
    limit_table = build_reward_matrix(limit, spec, cost_tables=cost_tables)
    c = spec.constraints
    cover_sol = solve_lp(LinearProgramInstance.from_table(cover_table, c))
    limit_sol = solve_lp(LinearProgramInstance.from_table(limit_table, c))
    span = default_lipschitz_span(cover_table, c) if x_max is None else x_max
    c_hat = estimate_lipschitz(cover_table, c, span, grid)
    b_max = float(spec.b_max.max())
    gap = theorem2_gap(d, nu, b_max, c_hat)
    log.info("baseline: i*=%d d=%.3g p_cover=%.6f p_limit=%.6f c_hat=%.4g gap=%.4g",
             i_star, d, cover_sol.value, limit_sol.value, c_hat, gap)
    return BaselineReport(i_star, d, cover_sol, limit_sol, c_hat, span, nu, b_max, gap)
