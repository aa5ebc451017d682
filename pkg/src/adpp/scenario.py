"""Built-in three-sensor reporting scenario ("paper-sec4").

Three sensors observe omega_i in {0,1,2,3} and decide whether to report
(alpha_i in {0,1}). Utility u_0 = min(alpha_1 w_1/10 + (alpha_2 w_2 + alpha_3 w_3)/20, 1)
is stored as the cost p_0 = -u_0; reporting costs one watt, p_i = alpha_i, with an
average budget of 1/3 per sensor. States are independent across sensors and
converge to the per-sensor marginal (0.1, 0.7, 0.1, 0.1).

The transient distributions and the 8-member cover are not pinned down by the
source scenario; the defaults here are stand-ins and can be overridden.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import (CoveringSet, DistributionSchedule, ProblemSpec, joint_digits,
                      nearest_member, product_distribution)

NAME = "paper-sec4"
LIMIT_MARGINAL = (0.1, 0.7, 0.1, 0.1)
POWER_BUDGET = 1.0 / 3.0
REPORTED_OPTIMUM = 0.1267  # utility convention

# mass moved out of the dominant entry into an adjacent one for non-limit members
DEFAULT_SHIFT = 0.3


@dataclass(frozen=True)
class SensorScenario:
    spec: ProblemSpec
    schedule: DistributionSchedule
    cover: CoveringSet
    V: float = 50.0
    D: int = 10
    w: int = 40
    T: int = 5000

    @property
    def limit(self) -> np.ndarray:
        return self.schedule.limit


def sensor_problem(n_sensors: int = 3, n_levels: int = 4) -> ProblemSpec:
    state_cards = (n_levels,) * n_sensors
    action_cards = (2,) * n_sensors
    weights = np.array([1 / 10] + [1 / 20] * (n_sensors - 1))
    alpha = joint_digits(action_cards).astype(float)  # (|A|, N)
    omega = joint_digits(state_cards).astype(float)   # (|Omega|, N)
    raw = np.einsum("ai,si,i->as", alpha, omega, weights)
    utility = np.minimum(raw, 1.0)
    K = n_sensors
    costs = np.empty((K + 1, alpha.shape[0], omega.shape[0]))
    costs[0] = -utility
    for i in range(n_sensors):
        costs[i + 1] = alpha[:, i][:, None] * np.ones(omega.shape[0])[None, :]
    return ProblemSpec(
        state_cards=state_cards,
        action_cards=action_cards,
        costs=costs,
        constraints=np.full(K, POWER_BUDGET),
        p_max=np.array([0.0] + [1.0] * K),
        p_min=np.array([-1.0] + [0.0] * K),
        name=NAME,
    )


def shifted_marginal(marginal, src: int, dst: int, amount: float) -> np.ndarray:
    out = np.array(marginal, dtype=float)
    amount = min(amount, out[src])
    out[src] -= amount
    out[dst] += amount
    return out / out.sum()


def default_cover_members(shift: float = DEFAULT_SHIFT, n_sensors: int = 3,
                          marginal=LIMIT_MARGINAL) -> tuple[np.ndarray, list[str]]:
    """Eight product distributions; member 0 is the limit itself.

    Member j (1..7) perturbs sensor i iff bit i of j is set, moving ``shift`` of
    mass from entry 1 to entry 0 or entry 2 (alternating with j + i).
    """
    base = np.asarray(marginal, dtype=float)
    variants = [shifted_marginal(base, 1, 0, shift), shifted_marginal(base, 1, 2, shift)]
    members, labels = [product_distribution([base] * n_sensors)], ["limit"]
    for j in range(1, 2 ** n_sensors):
        margs, tags = [], []
        for i in range(n_sensors):
            if j >> i & 1:
                v = (j + i) % 2
                margs.append(variants[v])
                tags.append(f"s{i + 1}:{'1>0' if v == 0 else '1>2'}")
            else:
                margs.append(base)
        members.append(product_distribution(margs))
        labels.append(",".join(tags))
    return np.stack(members), labels


def schedule_cover_radius(schedule: DistributionSchedule, members: np.ndarray) -> float:
    """Smallest radius covering every pi_t of the schedule (floored at 1e-6)."""
    mats = schedule.matrix()
    d = np.abs(mats[:, None, :] - members[None, :, :]).sum(axis=2).min(axis=1)
    return float(max(d.max(), 1e-6))


def build(shift: float = DEFAULT_SHIFT, rho: float = 0.995, t_mix: int | None = None,
          horizon: int = 5000, stationary: bool = False, V: float = 50.0, D: int = 10,
          w: int = 40) -> SensorScenario:
    spec = sensor_problem()
    members, labels = default_cover_members(shift)
    limit = members[0]
    if stationary:
        schedule = DistributionSchedule(limit, horizon, kind="stationary")
    else:
        schedule = DistributionSchedule(limit, horizon, kind="geometric-cycle",
                                        members=members, rho=rho, t_mix=t_mix)
    delta = 1.0001 * schedule_cover_radius(schedule, members)
    cover = CoveringSet.from_members(members, delta, labels=labels)
    assert nearest_member(cover, limit)[0] == 0
    return SensorScenario(spec, schedule, cover, V=V, D=D, w=w, T=horizon)
