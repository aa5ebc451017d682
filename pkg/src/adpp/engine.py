"""Per-slot approximate drift-plus-penalty controller.

Each slot t:
  1. pick the cover member that best explains the delayed window of states
     omega(t-D-w+1) .. omega(t-D) (maximum likelihood);
  2. pick the pure strategy minimising V r0 + sum_k Q_k(t) r_k under that member;
  3. realise p_k(t) and update Q_k(t+1) = max(Q_k(t) + p_k(t-D) - c_k, 0).

States do not depend on decisions, so sampling and detection for a whole
run are done up front; only steps 2-3 run inside the slot loop, vectorised
over the runs of a batch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .problem import CoveringSet, DistributionSchedule, ProblemSpec, sample_path
from .strategies import build_cover_tables, strategy_cost_tables

log = logging.getLogger(__name__)


class CoverInconsistentError(RuntimeError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    V: float = 50.0
    D: int = 10
    w: int = 40
    T: int = 5000
    seed: int = 0

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if not self.V >= 0:
            out.append("V must be >= 0")
        if self.D < 0:
            out.append("D must be >= 0")
        if self.w < 1:
            out.append("w must be >= 1")
        if not self.T > self.D + self.w:
            out.append("T must exceed D + w")
        return out


@dataclass
class EngineState:
    """Mutable per-run state for step-by-step use; ``run_batch`` keeps the same data in arrays."""

    Q: np.ndarray
    penalty_buffer: np.ndarray   # (D, K): p_k(t-D) .. p_k(t-1), zero before slot 0
    t: int = 0

    @classmethod
    def initial(cls, K: int, D: int) -> "EngineState":
        return cls(np.zeros(K), np.zeros((D, K)))


@dataclass(frozen=True)
class SlotRecord:
    t: int
    state: int
    j_star: int
    m_star: int
    p: np.ndarray
    Q: np.ndarray


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def queue_update(Q: np.ndarray, delayed_penalty: np.ndarray, constraints: np.ndarray) -> np.ndarray:
    return np.maximum(Q + delayed_penalty - constraints, 0.0)


def lyapunov(Q: np.ndarray) -> float:
    Q = np.asarray(Q, dtype=float)
    return 0.5 * float(np.dot(Q, Q))


def log_likelihood_table(cover: CoveringSet) -> np.ndarray:
    """log P_j(s) with -inf on zero entries, plus a trailing zero column used as padding."""
    with np.errstate(divide="ignore"):
        logp = np.log(cover.members)
    return np.concatenate([logp, np.zeros((logp.shape[0], 1))], axis=1)


def _window_scores(loglik: np.ndarray, windows: np.ndarray) -> np.ndarray:
    # windows: (..., w) state indices; the padding index selects the zero column
    return loglik[:, windows].sum(axis=-1)


def _pick(scores: np.ndarray) -> np.ndarray:
    best = scores.max(axis=0)
    if np.any(best == -np.inf):
        raise CoverInconsistentError("covering set inconsistent with data: every member has zero likelihood")
    return scores.argmax(axis=0)


def detect_distribution(window, cover: CoveringSet, loglik: np.ndarray | None = None) -> tuple[int, np.ndarray]:
    """Maximum-likelihood member for the observed window.

    Returns the index (lowest index on ties) and each member's window
    log-likelihood. Members giving an observed state zero mass score -inf.
    """
    if loglik is None:
        loglik = log_likelihood_table(cover)
    window = np.asarray(window, dtype=np.int64)
    scores = _window_scores(loglik, window)
    return int(_pick(scores[:, None])[0]), scores


def detection_windows(T: int, D: int, w: int) -> np.ndarray:
    """(T, w) state positions feeding slot t; positions before slot 0 are -1."""
    t = np.arange(T)[:, None]
    pos = t - D - w + 1 + np.arange(w)[None, :]
    return np.where(pos >= 0, pos, -1)


def detect_series(states: np.ndarray, cover: CoveringSet, D: int, w: int,
                  loglik: np.ndarray | None = None) -> np.ndarray:
    """j* for every slot of one run, using only states already fed back.

    During warm-up (t < D + w - 1) only the available prefix is scored; with
    no observations at all every member ties and index 0 is returned.
    """
    if loglik is None:
        loglik = log_likelihood_table(cover)
    pad = loglik.shape[1] - 1
    pos = detection_windows(states.size, D, w)
    obs = np.where(pos >= 0, states[np.maximum(pos, 0)], pad)
    return _pick(_window_scores(loglik, obs))


def dpp_scores(V: float, Q: np.ndarray, rewards: np.ndarray) -> np.ndarray:
    """V r0 + sum_k Q_k r_k for one or many queue vectors (fixed evaluation order)."""
    Q = np.asarray(Q, dtype=float)
    if Q.ndim == 1:
        score = V * rewards[0]
        for k in range(Q.size):
            score = score + Q[k] * rewards[k + 1]
        return score
    score = np.broadcast_to(V * rewards[0], (Q.shape[0], rewards.shape[1])).copy()
    for k in range(Q.shape[1]):
        score += Q[:, k:k + 1] * rewards[k + 1][None, :]
    return score


def select_strategy(Q: np.ndarray, j_star: int, tables: np.ndarray, V: float) -> int:
    """Strategy index minimising the drift-plus-penalty expression; lowest index on ties."""
    return int(np.argmin(dpp_scores(V, Q, tables[j_star])))


def compute_B_t(lam: np.ndarray, spec: ProblemSpec, constraints: np.ndarray | None = None,
                cost_tables: np.ndarray | None = None) -> float:
    return float(B_series(np.asarray(lam)[None, :], spec, constraints, cost_tables)[0])


def B_series(lams: np.ndarray, spec: ProblemSpec, constraints: np.ndarray | None = None,
             cost_tables: np.ndarray | None = None) -> np.ndarray:
    """B_t = max_m 1/2 sum_k sum_s lam_t(s) |p_k(S^m(s), s) - c_k| for every row of ``lams``."""
    c = spec.constraints if constraints is None else np.asarray(constraints, dtype=float)
    if c.size == 0:
        return np.zeros(len(lams))
    if cost_tables is None:
        cost_tables = strategy_cost_tables(spec)
    dev = 0.5 * np.abs(cost_tables[1:] - c[:, None, None]).sum(axis=0)  # (F, |Omega|)
    return (np.asarray(lams, dtype=float) @ dev.T).max(axis=1)


# ---------------------------------------------------------------------------
# episodes
# ---------------------------------------------------------------------------

@dataclass
class BatchResult:
    """Arrays for R runs: states/j*/m* are (R, T), p is (R, T, K+1), Q is (R, T+1, K)."""

    states: np.ndarray
    j_star: np.ndarray
    m_star: np.ndarray
    p: np.ndarray
    Q: np.ndarray

    def records(self, run: int) -> list[SlotRecord]:
        return [SlotRecord(t, int(self.states[run, t]), int(self.j_star[run, t]),
                           int(self.m_star[run, t]), self.p[run, t].copy(), self.Q[run, t].copy())
                for t in range(self.states.shape[1])]


@dataclass(frozen=True)
class Prepared:
    """Immutable per-problem data shared by every run."""

    spec: ProblemSpec
    schedule: DistributionSchedule
    cover: CoveringSet
    cost_tables: np.ndarray   # (K+1, F, |Omega|)
    cover_tables: np.ndarray  # (M, K+1, F)
    loglik: np.ndarray

    @classmethod
    def build(cls, spec: ProblemSpec, schedule: DistributionSchedule, cover: CoveringSet) -> "Prepared":
        cost_tables = strategy_cost_tables(spec)
        return cls(spec, schedule, cover, cost_tables,
                   build_cover_tables(cover.members, spec, cost_tables=cost_tables),
                   log_likelihood_table(cover))


def run_seed(master_seed: int, run_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed) & (2**64 - 1), int(run_index)])


def run_batch(prep: Prepared, config: EngineConfig, run_indices, *, verify_replicas: bool = False) -> BatchResult:
    """Run several independent episodes in lock-step.

    Every run draws its states from its own generator seeded by
    (config.seed, run index), so a run's trace does not depend on which
    batch it is executed in.
    """
    run_indices = list(run_indices)
    R, T, D = len(run_indices), config.T, config.D
    if T > prep.schedule.horizon:
        raise ValueError(f"T={T} exceeds schedule horizon {prep.schedule.horizon}")
    spec = prep.spec
    K = spec.num_penalties
    c = spec.constraints

    states = np.empty((R, T), dtype=np.int64)
    j_star = np.empty((R, T), dtype=np.int64)
    for r, idx in enumerate(run_indices):
        rng = np.random.default_rng(run_seed(config.seed, idx))
        states[r] = sample_path(prep.schedule, rng, T)
        j_star[r] = detect_series(states[r], prep.cover, D, config.w, prep.loglik)

    m_star = np.empty((R, T), dtype=np.int64)
    p = np.empty((R, T, K + 1))
    Q = np.zeros((R, T + 1, K))
    replicas = np.zeros((spec.num_users, R, K)) if verify_replicas else None
    V = float(config.V)
    for t in range(T):
        q = Q[:, t]
        jt = j_star[:, t]
        groups = np.unique(jt)
        if groups.size == 1:
            m_star[:, t] = dpp_scores(V, q, prep.cover_tables[groups[0]]).argmin(axis=1)
        else:
            for j in groups:
                sel = jt == j
                m_star[sel, t] = dpp_scores(V, q[sel], prep.cover_tables[j]).argmin(axis=1)
        p[:, t] = prep.cost_tables[:, m_star[:, t], states[:, t]].T
        delayed = p[:, t - D, 1:] if t >= D else np.zeros((R, K))
        Q[:, t + 1] = queue_update(q, delayed, c)
        if replicas is not None:
            for i in range(spec.num_users):
                replicas[i] = queue_update(replicas[i], delayed, c)
                if not np.array_equal(replicas[i], Q[:, t + 1]):
                    raise AssertionError(f"user {i} queue replica diverged at slot {t}")
    return BatchResult(states, j_star, m_star, p, Q)


def run_episode(spec: ProblemSpec, schedule: DistributionSchedule, cover: CoveringSet,
                config: EngineConfig, run_index: int = 0, prepared: Prepared | None = None,
                verify_replicas: bool = False) -> list[SlotRecord]:
    prep = prepared or Prepared.build(spec, schedule, cover)
    return run_batch(prep, config, [run_index], verify_replicas=verify_replicas).records(0)


def step(state: EngineState, omega: int, j_star: int, prep: Prepared, V: float) -> SlotRecord:
    """Advance a single run by one slot (reference path, used for cross-checks)."""
    m = select_strategy(state.Q, j_star, prep.cover_tables, V)
    p = prep.cost_tables[:, m, omega].copy()
    Q_now = state.Q.copy()
    D = state.penalty_buffer.shape[0]
    if D:
        delayed = state.penalty_buffer[0].copy()
        state.penalty_buffer = np.vstack([state.penalty_buffer[1:], p[None, 1:]])
    else:
        delayed = p[1:]
    state.Q = queue_update(state.Q, delayed, prep.spec.constraints)
    rec = SlotRecord(state.t, omega, j_star, m, p, Q_now)
    state.t += 1
    return rec
