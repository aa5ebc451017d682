"""Pure distributed strategies and their expected cost/penalty tables.

A pure strategy gives every user a lookup table from its own state to one of
its actions. Strategies are indexed from 0 in mixed-radix order over the
(user, local state) digits, user 0 / state 0 least significant, so index 0
maps every state to action 0 and index F-1 maps every state to the last action.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import ProblemSpec, joint_digits, radix_places

DEFAULT_STRATEGY_CAP = 10**6


class StrategyCapExceeded(ValueError):
    pass


def strategy_count(spec: ProblemSpec, cap: int | None = DEFAULT_STRATEGY_CAP) -> int:
    count = 1
    for n_states, n_actions in zip(spec.state_cards, spec.action_cards):
        count *= n_actions ** n_states
    if cap is not None and count > cap:
        raise StrategyCapExceeded(
            f"{count} pure strategies exceed the enumeration cap of {cap}"
        )
    return count


def _digit_cards(spec: ProblemSpec) -> list[int]:
    return [a for s, a in zip(spec.state_cards, spec.action_cards) for _ in range(s)]


@dataclass(frozen=True)
class PureStrategy:
    """Per-user tables; ``tables[i][s]`` is user i's action in local state s."""

    tables: tuple[tuple[int, ...], ...]

    def action(self, state: tuple[int, ...]) -> tuple[int, ...]:
        return tuple(tab[s] for tab, s in zip(self.tables, state))


def decode_strategy(m: int, spec: ProblemSpec) -> PureStrategy:
    F = strategy_count(spec, cap=None)
    if not 0 <= m < F:
        raise IndexError(f"strategy index {m} outside [0, {F})")
    tables = []
    for n_states, n_actions in zip(spec.state_cards, spec.action_cards):
        tab = []
        for _ in range(n_states):
            tab.append(m % n_actions)
            m //= n_actions
        tables.append(tuple(tab))
    return PureStrategy(tuple(tables))


def encode_strategy(strategy: PureStrategy, spec: ProblemSpec) -> int:
    digits = [a for tab in strategy.tables for a in tab]
    cards = _digit_cards(spec)
    if len(digits) != len(cards):
        raise ValueError("strategy shape does not match the problem")
    for d, c in zip(digits, cards):
        if not 0 <= d < c:
            raise ValueError(f"action {d} outside [0, {c})")
    return int(np.dot(np.asarray(digits, dtype=np.int64), radix_places(cards)))


def joint_action_table(spec: ProblemSpec, cap: int | None = DEFAULT_STRATEGY_CAP) -> np.ndarray:
    """Array ``act[m, s]``: joint action index chosen by strategy m in joint state s."""
    F = strategy_count(spec, cap)
    cards = _digit_cards(spec)
    places = radix_places(cards)
    m = np.arange(F, dtype=np.int64)
    # digit offset of (user i, local state 0)
    offsets = np.concatenate([[0], np.cumsum(spec.state_cards)[:-1]]).astype(np.int64)
    action_places = radix_places(spec.action_cards)
    states = joint_digits(spec.state_cards)  # (|Omega|, N)
    act = np.zeros((F, spec.num_states), dtype=np.int64)
    for i, n_actions in enumerate(spec.action_cards):
        digit_pos = offsets[i] + states[:, i]  # (|Omega|,)
        user_action = (m[:, None] // places[digit_pos][None, :]) % n_actions
        act += user_action * action_places[i]
    return act


def strategy_cost_tables(spec: ProblemSpec, cap: int | None = DEFAULT_STRATEGY_CAP) -> np.ndarray:
    """``P[k, m, s] = p_k(S^m(s), s)``; shape (K+1, F, |Omega|)."""
    act = joint_action_table(spec, cap)
    s = np.arange(spec.num_states)[None, :]
    return np.ascontiguousarray(spec.costs[:, act, s])


def expected_value(m: int, k: int, lam: np.ndarray, spec: ProblemSpec) -> float:
    """r_{k,lam}^{(m)}: expectation of p_k under strategy m when states follow ``lam``."""
    if not 0 <= k <= spec.num_penalties:
        raise IndexError(f"cost index {k} outside [0, {spec.num_penalties}]")
    strat = decode_strategy(m, spec)
    total = 0.0
    for s in range(spec.num_states):
        if lam[s] == 0.0:
            continue
        local = []
        rem = s
        for c in spec.state_cards:
            local.append(rem % c)
            rem //= c
        a = int(np.dot(strat.action(tuple(local)), radix_places(spec.action_cards)))
        total += lam[s] * spec.costs[k, a, s]
    return float(total)


@dataclass(frozen=True)
class StrategyTable:
    """Expected cost/penalty of every pure strategy under one distribution.

    ``rewards[k, m]`` = r_{k,lam}^{(m)}.
    """

    rewards: np.ndarray
    distribution: np.ndarray

    @property
    def count(self) -> int:
        return self.rewards.shape[1]

    @property
    def num_penalties(self) -> int:
        return self.rewards.shape[0] - 1


def weighted_rows(tables: np.ndarray, lam: np.ndarray) -> np.ndarray:
    # elementwise product + per-row reduction: equal rows give bit-equal sums
    return (tables * np.asarray(lam, dtype=float)).sum(axis=-1)


def build_reward_matrix(lam: np.ndarray, spec: ProblemSpec, *, cost_tables: np.ndarray | None = None,
                        cap: int | None = DEFAULT_STRATEGY_CAP) -> StrategyTable:
    if cost_tables is None:
        cost_tables = strategy_cost_tables(spec, cap)
    lam = np.asarray(lam, dtype=float)
    rewards = weighted_rows(cost_tables, lam)
    rewards.setflags(write=False)
    return StrategyTable(rewards, lam)


def build_cover_tables(members: np.ndarray, spec: ProblemSpec, *, cost_tables: np.ndarray | None = None,
                       cap: int | None = DEFAULT_STRATEGY_CAP) -> np.ndarray:
    """Reward matrices for every cover member stacked as (M, K+1, F)."""
    if cost_tables is None:
        cost_tables = strategy_cost_tables(spec, cap)
    out = np.stack([weighted_rows(cost_tables, lam) for lam in np.asarray(members, dtype=float)])
    out.setflags(write=False)
    return out
