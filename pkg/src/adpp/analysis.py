"""Time averages, beta-one mixing estimates and the finite-time bound arithmetic.

Bound variants
--------------
``printed``    the expressions exactly as published: the block tail uses
               exp(-2 eps^2 v_t^2 / u_max^2) and the detection bound uses
               exp(-2 zeta D^2 w + H) with zeta = log(alpha/beta)^2.
``hoeffding``  the forms the concentration arguments actually give:
               exp(-2 eps^2 v_t / u_max^2) and exp(-2 D^2 w / zeta + H).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .engine import B_series, BatchResult
from .problem import CoveringSet, DistributionSchedule, ProblemSpec, metric_entropy

log = logging.getLogger(__name__)

VARIANTS = ("printed", "hoeffding")
MIN_RUNS = 50


class EpsilonBelowMeanGap(ValueError):
    pass


class MixingTooSlow(ValueError):
    pass


class InsufficientRuns(ValueError):
    pass


def clip01(x):
    return np.clip(x, 0.0, 1.0) if isinstance(x, np.ndarray) else min(max(float(x), 0.0), 1.0)


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------

@dataclass
class TraceEnsemble:
    """R runs x T slots. ``p`` is (R, T, K+1); ``Q`` is (R, T+1, K) with Q[:, T] the final queues."""

    j_star: np.ndarray
    m_star: np.ndarray
    p: np.ndarray
    Q: np.ndarray
    states: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        R, T = self.j_star.shape
        if self.m_star.shape != (R, T) or self.p.shape[:2] != (R, T) or self.Q.shape[:2] != (R, T + 1):
            raise ValueError("ensemble arrays are not rectangular")

    @property
    def runs(self) -> int:
        return self.j_star.shape[0]

    @property
    def horizon(self) -> int:
        return self.j_star.shape[1]

    @property
    def num_penalties(self) -> int:
        return self.p.shape[2] - 1

    @classmethod
    def from_batches(cls, batches: list[BatchResult], metadata: dict | None = None) -> "TraceEnsemble":
        cat = lambda name: np.concatenate([getattr(b, name) for b in batches], axis=0)  # noqa: E731
        return cls(cat("j_star"), cat("m_star"), cat("p"), cat("Q"), cat("states"), dict(metadata or {}))

    def running_average(self, k: int) -> np.ndarray:
        """(R, T) array; column t-1 holds (1/t) sum_{tau<t} p_k(tau)."""
        return np.cumsum(self.p[:, :, k], axis=1) / np.arange(1, self.horizon + 1)


def time_average(ensemble: TraceEnsemble, k: int, t: int) -> tuple[np.ndarray, float]:
    """Per-run (1/t) sum_{tau<t} p_k(tau) and its ensemble mean."""
    if not 1 <= t <= ensemble.horizon:
        raise ValueError(f"t={t} outside [1, {ensemble.horizon}]")
    per_run = ensemble.p[:, :t, k].sum(axis=1) / t
    return per_run, float(per_run.mean())


def empirical_tail(ensemble: TraceEnsemble, k: int, t: int, threshold: float, level: float) -> float:
    """Fraction of runs whose time average up to t exceeds ``level + threshold``.

    ``level`` is c_k for penalties and p^(opt) for the objective.
    """
    per_run, _ = time_average(ensemble, k, t)
    return float(np.mean(per_run - level > threshold))


def sample_path_violations(ensemble: TraceEnsemble, constraints: np.ndarray, D: int,
                           slack: np.ndarray, times) -> list[tuple[int, int, int, float]]:
    """Check (1/t) sum_{tau<t-D} (p_k - c_k) <= Q_k(t)/t + D slack_k / t for every run.

    Returns the violations as (run, k, t, excess).
    """
    out = []
    for t in times:
        n = max(t - D, 0)
        lhs = (ensemble.p[:, :n, 1:] - constraints[None, None, :]).sum(axis=1) / t  # (R, K)
        rhs = ensemble.Q[:, t, :] / t + D * np.asarray(slack)[None, :] / t
        bad = np.argwhere(lhs > rhs + 1e-9)
        for r, k in bad:
            out.append((int(r), int(k) + 1, int(t), float(lhs[r, k] - rhs[r, k])))
    return out


# ---------------------------------------------------------------------------
# beta-one mixing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MixingEstimate:
    k: int
    lags: tuple[int, ...]
    beta_hat: np.ndarray                 # (len(lags),)
    anchors: tuple[tuple[int, ...], ...]  # anchor grid used for each lag
    per_anchor: tuple[np.ndarray, ...]
    min_expected_count: float = math.inf  # smallest expected joint-cell count seen

    def at(self, lag: int) -> float:
        return float(self.beta_hat[self.lags.index(lag)])


def tv_lagged(x: np.ndarray, y: np.ndarray, n_levels: int) -> tuple[float, float]:
    """TV between the empirical joint of (x, y) and the product of its marginals.

    Returns (tv, smallest expected cell count under the product).
    """
    R = x.size
    joint = np.bincount(x * n_levels + y, minlength=n_levels * n_levels).reshape(n_levels, n_levels) / R
    px, py = joint.sum(axis=1), joint.sum(axis=0)
    prod = np.outer(px, py)
    used = prod > 0
    min_count = float(R * prod[used].min()) if used.any() else 0.0
    return 0.5 * float(np.abs(joint - prod).sum()), min_count


def default_anchors(horizon: int, lag: int, start: int, count: int = 20) -> np.ndarray:
    stop = horizon - 1 - lag
    if stop < start:
        raise ValueError(f"lag {lag} leaves no anchor in [{start}, {stop}]")
    return np.unique(np.linspace(start, stop, count).round().astype(int))


def beta_one_from_values(values: np.ndarray, lags, anchors=None, *, start: int = 0,
                         n_anchors: int = 20, k: int = 0, warn: bool = True) -> MixingEstimate:
    """Estimate beta_k(s) = max over anchors t of TV(P_{t,t+s}, P_t x P_{t+s}) across runs.

    ``values`` is (R, T) with finitely many distinct levels.
    """
    values = np.asarray(values)
    R, T = values.shape
    if R < MIN_RUNS:
        raise InsufficientRuns(f"need at least {MIN_RUNS} runs to estimate mixing, got {R}")
    levels, codes = np.unique(np.round(values, 12), return_inverse=True)
    codes = codes.reshape(R, T)
    L = levels.size
    lags = tuple(int(s) for s in lags)
    betas, grids, per = [], [], []
    worst_count = math.inf
    for s in lags:
        grid = np.asarray(anchors if anchors is not None else default_anchors(T, s, start, n_anchors))
        grid = grid[grid + s < T]
        tvs = np.empty(grid.size)
        for i, t0 in enumerate(grid):
            tvs[i], mc = tv_lagged(codes[:, t0], codes[:, t0 + s], L)
            worst_count = min(worst_count, mc)
        betas.append(float(tvs.max()) if tvs.size else math.nan)
        grids.append(tuple(int(g) for g in grid))
        per.append(tvs)
    if worst_count < 5 and warn:
        log.warning("mixing estimate: smallest expected joint-cell count is %.2f (< 5); "
                    "beta_hat is dominated by sampling noise", worst_count)
    return MixingEstimate(k, lags, np.array(betas), tuple(grids), tuple(per), worst_count)


def estimate_beta_one(ensemble: TraceEnsemble, k: int, lags, anchors=None, *, D: int = 0,
                      w: int = 1, n_anchors: int = 20, warn: bool = True) -> MixingEstimate:
    return beta_one_from_values(ensemble.p[:, :, k], lags, anchors, start=D + w,
                                n_anchors=n_anchors, k=k, warn=warn)


# ---------------------------------------------------------------------------
# PAC tail bound for time averages
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TailBound:
    raw: float
    eps_tk: float
    u_t: int
    v_t: int

    @property
    def clipped(self) -> float:
        return clip01(self.raw)


def pac_tail_bound(eps_k: float, t: int, u_t: int, beta_at_u_t: float, u_max_k: float,
                   mean_gap: float, variant: str = "printed") -> TailBound:
    """u_t exp(-2 eps_tk^2 v_t^a / u_max^2) + t beta(u_t), a = 2 (printed) or 1 (hoeffding)."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if u_t < 1 or t % u_t:
        raise ValueError(f"u_t={u_t} must divide t={t}")
    if not eps_k > mean_gap:
        raise EpsilonBelowMeanGap(f"epsilon below mean gap: eps_k={eps_k} <= {mean_gap}")
    v_t = t // u_t
    eps_tk = eps_k - mean_gap
    power = 2 if variant == "printed" else 1
    if u_max_k <= 0:
        expo = 0.0
    else:
        expo = math.exp(-2.0 * eps_tk**2 * v_t**power / u_max_k**2)
    return TailBound(u_t * expo + t * beta_at_u_t, eps_tk, u_t, v_t)


def divisors(n: int) -> list[int]:
    small = [d for d in range(1, int(math.isqrt(n)) + 1) if n % d == 0]
    return sorted(set(small + [n // d for d in small]))


# ---------------------------------------------------------------------------
# detection error
# ---------------------------------------------------------------------------

def divergence_matrix(lams: np.ndarray, cover: CoveringSet, i_star: int) -> np.ndarray:
    """D_{tau,j} = E_{pi_tau} log(P_j / P_{i*}) for each row of ``lams``; column i* is 0."""
    lams = np.atleast_2d(np.asarray(lams, dtype=float))
    mem = cover.members
    support = lams > 0
    if np.any(support[:, None, :] & (mem[None, :, :] <= 0)):
        raise ValueError("a cover member puts zero mass where pi_tau has mass (positivity of the cover fails)")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(mem > 0, np.log(mem) - np.log(np.where(mem[i_star] > 0, mem[i_star], 1.0)), 0.0)
    return lams @ ratio.T


def divergence_series(schedule: DistributionSchedule | np.ndarray, cover: CoveringSet, i_star: int,
                      t_range=None) -> np.ndarray:
    """D_tau = min_{j != i*} D_{tau,j}; empty when the cover has a single member."""
    lams = schedule.matrix() if isinstance(schedule, DistributionSchedule) else np.atleast_2d(schedule)
    if t_range is not None:
        lams = lams[np.asarray(list(t_range))]
    if len(cover) == 1:
        return np.array([])
    dj = divergence_matrix(lams, cover, i_star)
    others = np.delete(dj, i_star, axis=1)
    return others.min(axis=1)


def zeta(cover: CoveringSet) -> float:
    return math.log(cover.alpha / cover.beta) ** 2


def detection_error_bound(D_tau, w: int, zeta_value: float, entropy: float,
                          variant: str = "printed", single_member: bool = False):
    """Raw P_e,up; vectorised over D_tau. Zero when there is no competing member."""
    if w < 1:
        raise ValueError("w must be >= 1")
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    D_tau = np.asarray(D_tau, dtype=float)
    if single_member:
        return np.zeros_like(D_tau) if D_tau.ndim else 0.0
    if variant == "printed":
        expo = -2.0 * zeta_value * D_tau**2 * w + entropy
    else:
        expo = -2.0 * D_tau**2 * w / zeta_value + entropy
    out = np.exp(expo)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# finite-time bound report
# ---------------------------------------------------------------------------

@dataclass
class BoundReport:
    t: int
    V: float
    D: int
    w: int
    variant: str
    p_opt: float
    lipschitz: float
    Delta: float
    delta: float
    entropy: float
    zeta: float
    C: float
    F_slack: float
    J_bar: float
    H_bar: float
    psi: float
    Gamma: float
    Q_up: float
    B: np.ndarray
    D_tau: np.ndarray
    Pe_raw: np.ndarray
    Pe: np.ndarray
    per_k: list[dict] = field(default_factory=list)
    thresholds: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def objective_envelope(self) -> float:
        """p^(opt) + (c+1) Delta + psi_t: the objective level of Part A before epsilon."""
        return self.p_opt + (self.lipschitz + 1) * self.Delta + self.psi

    def rows(self) -> list[dict]:
        """Long-format rows: quantity, k, t, s, value, raw."""
        out = []

        def add(q, value, k="", s="", raw=None):
            out.append({"quantity": q, "k": k, "t": self.t, "s": s, "value": value,
                        "raw": value if raw is None else raw})

        for name in ("V", "D", "w", "p_opt", "lipschitz", "Delta", "delta", "entropy", "zeta", "C",
                     "F_slack", "J_bar", "H_bar", "psi", "Gamma", "Q_up", "objective_envelope"):
            add(name, float(getattr(self, name)))
        add("B_t", float(self.B[-1]) if self.B.size else math.nan)
        add("B_mean", float(self.B.mean()) if self.B.size else math.nan)
        if self.D_tau.size:
            add("D_tau", float(self.D_tau[-1]))
            add("Pe_up", float(self.Pe[-1]), raw=float(self.Pe_raw[-1]))
            add("Pe_up_mean", float(self.Pe.mean()), raw=float(self.Pe_raw.mean()))
        for row in self.per_k:
            k = row["k"]
            for q in ("eps_k", "eps_tk", "mean_gap", "u_t", "v_t", "beta_u"):
                add(q, row[q], k=k, s=row["u_t"] if q == "beta_u" else "")
            add("tail_bound", row["tail_clipped"], k=k, s=row["u_t"], raw=row["tail_raw"])
            if "empirical_tail" in row:
                add("empirical_tail", row["empirical_tail"], k=k, s=row["u_t"])
        for name, val in self.thresholds.items():
            add(name, val)
        return out


def _default_C(ensemble: TraceEnsemble | None, D: int) -> float:
    if ensemble is None:
        return 0.0
    q = ensemble.Q[:, min(D, ensemble.horizon), :]
    return float(0.5 * (q**2).sum(axis=1).max())


def theorem3_quantities(spec: ProblemSpec, schedule: DistributionSchedule, cover: CoveringSet, *,
                        i_star: int, p_opt: float, lipschitz: float, distance: float, nu: float,
                        V: float, D: int, w: int, t: int, C: float | None = None,
                        F_slack: float | None = None, variant: str = "printed",
                        ensemble: TraceEnsemble | None = None, eps: float = 0.05,
                        gammas: tuple[float, float] | None = None, u_t: int | None = None,
                        cost_tables: np.ndarray | None = None) -> BoundReport:
    """Substitute every ingredient of the finite-time objective/constraint envelopes at slot t.

    With an ensemble, the per-k tail bounds use ensemble means for E p_k and
    beta_hat estimated from the runs; u_t is the divisor of t minimising the
    bound unless given. With ``gammas`` the waiting-time thresholds are
    evaluated and MixingTooSlow is raised when gamma_i <= t beta_hat(u_t).
    """
    if V <= 0:
        raise ValueError("bound arithmetic divides by V; need V > 0")
    if not 1 <= t <= schedule.horizon:
        raise ValueError("t outside the schedule horizon")
    K = spec.num_penalties
    lams = schedule.matrix(0, t)
    dist = np.abs(lams - schedule.limit[None, :]).sum(axis=1)
    B = B_series(lams, spec, cost_tables=cost_tables)
    b_max = float(spec.b_max.max())
    Delta = b_max * (distance + nu)
    J_bar = float(spec.p_max.max() * (dist.mean() + cover.delta))
    H_bar = float((1 + 2 * D) * B.sum() / t)
    H = metric_entropy(cover)
    z = zeta(cover)
    single = len(cover) == 1
    D_tau = divergence_series(lams, cover, i_star)
    Pe_raw = (detection_error_bound(D_tau, w, z, H, variant) if not single else np.zeros(t))
    Pe = clip01(np.asarray(Pe_raw, dtype=float))
    C = _default_C(ensemble, D) if C is None else C
    F_slack = max(0.0, p_opt - float(spec.p_min[0])) if F_slack is None else F_slack
    pmax0 = float(spec.p_max[0])
    sum_BP = float((B * Pe).sum()) if Pe.size else 0.0
    sum_P = float(Pe.sum())
    c1 = lipschitz + 1.0
    psi = (V * c1 * J_bar + H_bar + C / t) / V + (1 + 2 * D) / (t * V) * sum_BP + pmax0 / t * sum_P
    Gamma = V * c1 * (Delta + J_bar) + H_bar + C + (1 + 2 * D) * sum_BP + pmax0 * sum_P
    Q_up = math.sqrt(max(V * F_slack / t + Gamma / t**2, 0.0))
    report = BoundReport(t, V, D, w, variant, p_opt, lipschitz, Delta, cover.delta, H, z, C, F_slack,
                         J_bar, H_bar, psi, Gamma, Q_up, B, np.asarray(D_tau), np.asarray(Pe_raw), Pe)
    if single:
        report.notes.append("single-member cover: no detection error event")

    if ensemble is not None:
        _attach_tail_bounds(report, spec, ensemble, p_opt, eps, variant, u_t)
        if gammas is not None:
            _attach_thresholds(report, spec, ensemble, eps, gammas)
    return report


def _levels(spec: ProblemSpec, p_opt: float) -> np.ndarray:
    return np.concatenate([[p_opt], spec.constraints])


def _beta_for(ensemble: TraceEnsemble, k: int, lag: int, D: int, w: int) -> float:
    return float(estimate_beta_one(ensemble, k, [lag], D=D, w=w, warn=False).beta_hat[0])


def usable_lags(t: int, horizon: int, D: int, w: int) -> list[int]:
    return [u for u in divisors(t) if D + w + u < horizon]


def _attach_tail_bounds(report: BoundReport, spec: ProblemSpec, ensemble: TraceEnsemble, p_opt: float,
                        eps: float, variant: str, u_t: int | None) -> None:
    t, D, w = report.t, report.D, report.w
    levels = _levels(spec, p_opt)
    candidates = [u_t] if u_t is not None else usable_lags(t, ensemble.horizon, D, w)
    if not candidates:
        report.notes.append("no lag divides t inside the horizon; tail bounds skipped")
        return
    for k in range(spec.num_penalties + 1):
        _, mean_avg = time_average(ensemble, k, t)
        mean_gap = mean_avg - levels[k]
        eps_k = mean_gap + eps
        best = None
        for u in candidates:
            beta = _beta_for(ensemble, k, u, D, w)
            tb = pac_tail_bound(eps_k, t, u, beta, float(spec.u_max[k]), mean_gap, variant)
            if best is None or tb.raw < best[0].raw:
                best = (tb, beta)
        tb, beta = best
        report.per_k.append({
            "k": k, "eps_k": eps_k, "eps_tk": tb.eps_tk, "mean_gap": mean_gap, "u_t": tb.u_t,
            "v_t": tb.v_t, "beta_u": beta, "tail_raw": tb.raw, "tail_clipped": tb.clipped,
            "empirical_tail": empirical_tail(ensemble, k, t, eps_k, levels[k]),
            "mean_is_estimate": True,
        })


def waiting_threshold(u_max0: float, u_t: int, eps: float, gamma: float, t: int, beta: float) -> float:
    """Right-hand side of the waiting-time condition t > (u_max u_t / (sqrt2 eps)) sqrt(log(u_t / (gamma - t beta)))."""
    slack = gamma - t * beta
    if slack <= 0:
        raise MixingTooSlow(f"mixing too slow for requested confidence: gamma={gamma} <= t*beta={t * beta:.4g}")
    return u_max0 * u_t / (math.sqrt(2) * eps) * math.sqrt(max(math.log(u_t / slack), 0.0))


def _attach_thresholds(report: BoundReport, spec: ProblemSpec, ensemble: TraceEnsemble, eps: float,
                       gammas: tuple[float, float]) -> None:
    t, D, w = report.t, report.D, report.w
    by_k = {row["k"]: row for row in report.per_k}
    if 0 not in by_k:
        report.notes.append("no tail bound for the objective; waiting thresholds skipped")
        return
    u0 = by_k[0]["u_t"]
    beta0 = by_k[0]["beta_u"]
    beta1 = max((_beta_for(ensemble, k, u0, D, w) for k in range(1, spec.num_penalties + 1)), default=0.0)
    u_max0 = float(spec.u_max[0])
    T0 = waiting_threshold(u_max0, u0, eps, gammas[0], t, beta0)
    T1 = waiting_threshold(u_max0, u0, eps, gammas[1], t, beta1)
    report.thresholds.update({"gamma0": gammas[0], "gamma1": gammas[1], "T_t0": T0, "T_t1": T1,
                              "t_in_T0": float(t > T0), "t_in_T1": float(t > T1)})


def tail_comparison(ensemble: TraceEnsemble, k: int, t: int, level: float, u_max_k: float, offsets,
                    *, variant: str = "printed", D: int = 0, w: int = 1, lags=None) -> list[dict]:
    """Empirical tail vs the clipped PAC bound for thresholds eps_k = mean_gap + offset.

    For each threshold the divisor u_t giving the smallest bound is used.
    ``level`` is c_k, or p^(opt) for k = 0.
    """
    lags = usable_lags(t, ensemble.horizon, D, w) if lags is None else list(lags)
    if not lags:
        return []
    est = estimate_beta_one(ensemble, k, lags, D=D, w=w, warn=False)
    _, mean_avg = time_average(ensemble, k, t)
    mean_gap = mean_avg - level
    out = []
    for off in offsets:
        if not off > 0:
            raise ValueError("offsets must be positive")
        eps_k = mean_gap + off
        best = min((pac_tail_bound(eps_k, t, u, est.at(u), u_max_k, mean_gap, variant) for u in lags),
                   key=lambda tb: tb.raw)
        emp = empirical_tail(ensemble, k, t, eps_k, level)
        out.append({"k": k, "t": t, "offset": float(off), "eps_k": eps_k, "u_t": best.u_t, "v_t": best.v_t,
                    "beta_u": est.at(best.u_t), "bound_raw": best.raw, "bound": best.clipped,
                    "empirical": emp, "holds": emp <= best.clipped})
    return out
