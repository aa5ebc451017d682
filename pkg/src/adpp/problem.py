"""Problem instances, distributions over joint states, schedules and covering sets.

Joint states and joint actions are enumerated in mixed-radix order with
user 0 as the least significant digit. Every pmf in this package is a dense
numpy vector over that enumeration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np

PMF_ATOL = 1e-12


class DimensionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# mixed-radix helpers
# ---------------------------------------------------------------------------

def radix_places(cards: Sequence[int]) -> np.ndarray:
    """Place value of each digit, least significant first."""
    places = np.ones(len(cards), dtype=np.int64)
    for i in range(1, len(cards)):
        places[i] = places[i - 1] * cards[i - 1]
    return places


def encode_joint(digits: Sequence[int], cards: Sequence[int]) -> int:
    return int(np.dot(np.asarray(digits, dtype=np.int64), radix_places(cards)))


def decode_joint(index: int, cards: Sequence[int]) -> tuple[int, ...]:
    out = []
    for c in cards:
        out.append(index % c)
        index //= c
    return tuple(out)


def joint_digits(cards: Sequence[int]) -> np.ndarray:
    """Array of shape (prod(cards), len(cards)); row j holds the digits of j."""
    total = int(np.prod(cards))
    idx = np.arange(total, dtype=np.int64)
    cols = []
    for c in cards:
        cols.append(idx % c)
        idx = idx // c
    return np.stack(cols, axis=1)


# ---------------------------------------------------------------------------
# problem definition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProblemSpec:
    """A finite distributed decision problem.

    ``costs[k, a, s]`` is p_k evaluated at joint action ``a`` and joint state
    ``s``; index 0 is the objective, 1..K are penalties with levels
    ``constraints[k-1]``.
    """

    state_cards: tuple[int, ...]
    action_cards: tuple[int, ...]
    costs: np.ndarray
    constraints: np.ndarray
    p_max: np.ndarray
    p_min: np.ndarray
    name: str = "problem"

    def __post_init__(self):
        object.__setattr__(self, "state_cards", tuple(int(c) for c in self.state_cards))
        object.__setattr__(self, "action_cards", tuple(int(c) for c in self.action_cards))
        for attr in ("costs", "constraints", "p_max", "p_min"):
            arr = np.array(getattr(self, attr), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)

    @property
    def num_users(self) -> int:
        return len(self.state_cards)

    @property
    def num_penalties(self) -> int:
        return self.costs.shape[0] - 1

    @property
    def num_states(self) -> int:
        return int(np.prod(self.state_cards))

    @property
    def num_actions(self) -> int:
        return int(np.prod(self.action_cards))

    @property
    def u_max(self) -> np.ndarray:
        return self.p_max - self.p_min

    @property
    def b_max(self) -> np.ndarray:
        return np.maximum(np.abs(self.p_max), np.abs(self.p_min))

    def cost(self, k: int, action: Sequence[int], state: Sequence[int]) -> float:
        a = encode_joint(action, self.action_cards)
        s = encode_joint(state, self.state_cards)
        return float(self.costs[k, a, s])


def validate_problem(spec: ProblemSpec) -> list[str]:
    """Return a list of violated invariants; empty when the spec is well formed."""
    issues: list[str] = []
    n = len(spec.state_cards)
    if n == 0:
        issues.append("no users")
    if len(spec.action_cards) != n:
        issues.append(f"user count mismatch: {n} state cards vs {len(spec.action_cards)} action cards")
    if any(c <= 0 for c in spec.state_cards) or any(c <= 0 for c in spec.action_cards):
        issues.append("state and action cardinalities must be positive")
        return issues
    if spec.costs.ndim != 3:
        issues.append(f"cost tables must be 3-d (K+1, |A|, |Omega|), got ndim={spec.costs.ndim}")
        return issues
    k1, na, ns = spec.costs.shape
    if k1 < 1:
        issues.append("cost tables must include the objective p_0")
    if na != spec.num_actions or ns != spec.num_states:
        issues.append(
            f"cost table shape mismatch: got ({na}, {ns}), expected ({spec.num_actions}, {spec.num_states})"
        )
    K = k1 - 1
    if spec.constraints.shape != (K,):
        issues.append(f"constraint count mismatch: {spec.constraints.size} levels for K={K} penalties")
    if spec.p_max.shape != (k1,) or spec.p_min.shape != (k1,):
        issues.append(f"bound count mismatch: p_max/p_min need {k1} entries")
        return issues
    if not np.all(np.isfinite(spec.costs)):
        issues.append("non-finite cost table entry")
    for k in range(k1):
        if spec.p_min[k] > spec.p_max[k]:
            issues.append(f"bound violation: p_min,{k} > p_max,{k}")
        if np.any(spec.costs[k] > spec.p_max[k]):
            issues.append(f"bound violation: p_{k} exceeds p_max,{k}={spec.p_max[k]}")
        if np.any(spec.costs[k] < spec.p_min[k]):
            issues.append(f"bound violation: p_{k} below p_min,{k}={spec.p_min[k]}")
    return issues


# ---------------------------------------------------------------------------
# distributions
# ---------------------------------------------------------------------------

def distribution(values: Sequence[float]) -> np.ndarray:
    """Validate ``values`` as a pmf and return it as a read-only float array."""
    pmf = np.array(values, dtype=float)
    if pmf.ndim != 1 or pmf.size == 0:
        raise DimensionError("a pmf must be a non-empty vector")
    if np.any(pmf < 0) or not np.all(np.isfinite(pmf)):
        raise ValueError("pmf entries must be finite and non-negative")
    if abs(pmf.sum() - 1.0) > PMF_ATOL:
        raise ValueError(f"pmf sums to {pmf.sum():.15g}, not 1")
    pmf.setflags(write=False)
    return pmf


def product_distribution(marginals: Sequence[Sequence[float]]) -> np.ndarray:
    """Joint pmf of independent users, in mixed-radix order (user 0 fastest)."""
    joint = reduce(lambda acc, m: np.outer(np.asarray(m, dtype=float), acc).ravel(),
                   marginals[1:], np.asarray(marginals[0], dtype=float))
    joint = joint / joint.sum()
    return distribution(joint)


def l1_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).sum())


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DistributionSchedule:
    """Deterministic sequence of state distributions converging to ``limit``.

    ``kind="stationary"`` keeps pi_t = limit for all t. ``kind="geometric-cycle"``
    blends the limit with the cycling members,
    pi_t = (1 - rho^t) limit + rho^t members[t mod M], for t < t_mix and
    pi_t = limit afterwards.
    """

    limit: np.ndarray
    horizon: int
    kind: str = "stationary"
    members: np.ndarray | None = None
    rho: float = 0.995
    t_mix: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "limit", distribution(self.limit))
        if self.kind not in ("stationary", "geometric-cycle"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "geometric-cycle":
            if self.members is None or len(self.members) == 0:
                raise ValueError("geometric-cycle schedule needs members")
            if not 0.0 <= self.rho < 1.0:
                raise ValueError("rho must lie in [0, 1)")
            mem = np.array(self.members, dtype=float)
            if mem.shape[1] != self.limit.size:
                raise DimensionError("schedule members and limit differ in size")
            mem.setflags(write=False)
            object.__setattr__(self, "members", mem)
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")

    def _check(self, t: int) -> None:
        if t < 0 or t >= self.horizon:
            raise IndexError(f"slot {t} outside horizon [0, {self.horizon})")

    def pmf(self, t: int) -> np.ndarray:
        self._check(t)
        return self.matrix(t, t + 1)[0]

    def matrix(self, start: int = 0, stop: int | None = None) -> np.ndarray:
        """Rows pi_t for t in [start, stop)."""
        stop = self.horizon if stop is None else stop
        t = np.arange(start, stop)
        if self.kind == "stationary":
            return np.broadcast_to(self.limit, (t.size, self.limit.size)).copy()
        weight = self.rho ** t.astype(float)
        if self.t_mix is not None:
            weight = np.where(t < self.t_mix, weight, 0.0)
        cyc = self.members[t % len(self.members)]
        out = (1.0 - weight)[:, None] * self.limit[None, :] + weight[:, None] * cyc
        return out / out.sum(axis=1, keepdims=True)

    def envelope(self, start: int = 0, stop: int | None = None) -> np.ndarray:
        """Non-increasing upper envelope of ||pi_t - pi||_1."""
        stop = self.horizon if stop is None else stop
        t = np.arange(start, stop)
        if self.kind == "stationary":
            return np.zeros(t.size)
        spread = max(l1_distance(m, self.limit) for m in self.members)
        env = self.rho ** t.astype(float) * spread
        if self.t_mix is not None:
            env = np.where(t < self.t_mix, env, 0.0)
        return env

    def distances(self, start: int = 0, stop: int | None = None) -> np.ndarray:
        return np.abs(self.matrix(start, stop) - self.limit[None, :]).sum(axis=1)


def _inverse_cdf(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    # count of cdf entries <= u, i.e. searchsorted(side="right") row by row
    idx = (cdf <= u[..., None]).sum(axis=-1)
    return np.minimum(idx, cdf.shape[-1] - 1)


def sample_state(schedule: DistributionSchedule, t: int, rng: np.random.Generator) -> int:
    """Draw one joint state from pi_t by inverse CDF using a single uniform from ``rng``."""
    schedule._check(t)
    cdf = np.cumsum(schedule.pmf(t))
    return int(_inverse_cdf(cdf, np.asarray(rng.random())))


def sample_path(schedule: DistributionSchedule, rng: np.random.Generator,
                horizon: int | None = None) -> np.ndarray:
    """States for t = 0..horizon-1; identical to calling sample_state for each t in order."""
    horizon = schedule.horizon if horizon is None else horizon
    if horizon > schedule.horizon:
        raise IndexError("horizon beyond schedule")
    u = rng.random(horizon)
    cdf = np.cumsum(schedule.matrix(0, horizon), axis=1)
    return _inverse_cdf(cdf, u).astype(np.int64)


# ---------------------------------------------------------------------------
# covering sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoveringSet:
    members: np.ndarray
    delta: float
    alpha: float
    beta: float
    labels: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        mem = np.array(self.members, dtype=float)
        if mem.ndim != 2 or mem.shape[0] == 0:
            raise ValueError("empty cover")
        for row in mem:
            distribution(row)
        mem.setflags(write=False)
        object.__setattr__(self, "members", mem)
        if self.delta <= 0:
            raise ValueError("covering radius must be positive")
        if not self.alpha > self.beta > 0:
            raise ValueError("need alpha > beta > 0")

    def __len__(self) -> int:
        return self.members.shape[0]

    def check(self, limit: np.ndarray) -> list[str]:
        issues = []
        nz = self.members[self.members > 0]
        if np.any(nz <= self.beta) or np.any(nz >= self.alpha):
            issues.append("member entries outside (beta, alpha)")
        _, d = nearest_member(self, limit)
        if not d < self.delta:
            issues.append(f"limit not covered: nearest distance {d} >= delta {self.delta}")
        return issues

    @classmethod
    def from_members(cls, members: np.ndarray, delta: float, margin: float = 1e-3,
                     labels: Sequence[str] = ()) -> "CoveringSet":
        """Build a cover whose alpha/beta bracket the nonzero entries by ``margin`` (relative)."""
        mem = np.asarray(members, dtype=float)
        nz = mem[mem > 0]
        return cls(mem, delta, alpha=float(nz.max() * (1 + margin)),
                   beta=float(nz.min() * (1 - margin)), labels=tuple(labels))


def nearest_member(cover: CoveringSet, target: np.ndarray) -> tuple[int, float]:
    """Index and L1 distance of the closest member; ties go to the lowest index."""
    if len(cover.members) == 0:
        raise ValueError("empty cover")
    target = np.asarray(target, dtype=float)
    if cover.members.shape[1] != target.size:
        raise DimensionError("target and cover members differ in size")
    d = np.abs(cover.members - target[None, :]).sum(axis=1)
    i = int(np.argmin(d))
    return i, float(d[i])


def metric_entropy(cover: CoveringSet) -> float:
    return math.log(len(cover))
