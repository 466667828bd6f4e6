"""Per-timestep private release, privacy accounting and Blowfish audits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatchError, ModelInconsistencyError
from .geometry import (
    MeasurementQuery,
    Polytope,
    difference_set,
    k_norm,
    sensitivity_hull,
)
from .markov import (
    BeliefState,
    Constraint,
    MarkovModel,
    extract_constraint,
    posterior_update,
    propagate,
)
from .mechanisms import (
    MECHANISMS,
    NoisyAnswer,
    cross_polytope,
    knorm_log_density,
    knorm_sample,
    l1_sensitivity,
    laplace_log_density,
    laplace_sample,
)
from .policy import PolicyGraph, restrict
from .protection import _all_dops, repair

REPAIRS = ("greedy", "min2d")


# -- accounting ---------------------------------------------------------------

@dataclass(frozen=True)
class LedgerRecord:
    t: int
    epsilon: float
    factor: float
    query_id: str = "f"
    singleton: bool = False

    @property
    def constrained(self) -> float:
        # a zero budget leaks nothing even when the factor is unbounded
        return 0.0 if self.epsilon == 0 else self.factor * self.epsilon


class PrivacyLedger:
    """Append-only list of releases."""

    def __init__(self):
        self._records: list[LedgerRecord] = []

    def append(self, record: LedgerRecord) -> None:
        if not record.epsilon >= 0:
            raise ValueError("ledger epsilon must be nonnegative")
        self._records.append(record)

    @property
    def records(self) -> tuple[LedgerRecord, ...]:
        return tuple(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    @property
    def total_epsilon(self) -> float:
        return math.fsum(r.epsilon for r in self._records)

    @property
    def constrained_total(self) -> float:
        return _fsum_inf(r.constrained for r in self._records)


def _fsum_inf(values) -> float:
    vals = list(values)
    if any(math.isinf(v) for v in vals):
        return math.inf
    return math.fsum(vals)


@dataclass(frozen=True)
class CompositionSummary:
    dphmm_total: float
    constrained_total: float
    per_timestamp: dict[int, tuple[float, float]]

    def to_dict(self) -> dict:
        return {
            "dphmm_total": self.dphmm_total,
            "constrained_total": _json_float(self.constrained_total),
            "per_timestamp": {
                str(t): {"epsilon": e, "constrained": _json_float(c)} for t, (e, c) in sorted(self.per_timestamp.items())
            },
        }


def _json_float(x: float):
    # strict JSON has no infinity
    return x if math.isfinite(x) else "inf"


def compose(ledger: PrivacyLedger | Sequence[LedgerRecord]) -> CompositionSummary:
    """Sequential composition: sum of budgets, and of factor-weighted budgets."""
    records = list(ledger)
    by_t: dict[int, list[LedgerRecord]] = {}
    for r in records:
        by_t.setdefault(r.t, []).append(r)
    per_t = {
        t: (math.fsum(r.epsilon for r in rs), _fsum_inf(r.constrained for r in rs))
        for t, rs in by_t.items()
    }
    return CompositionSummary(
        math.fsum(r.epsilon for r in records),
        _fsum_inf(r.constrained for r in records),
        per_t,
    )


def constrained_dp_factor(constraint: Constraint | Sequence[int], query: MeasurementQuery, hull: Polytope) -> float:
    """Largest K-norm between answers of two constraint states (0 for one state)."""
    states = np.asarray(list(constraint), dtype=int)
    if states.size < 2:
        return 0.0
    pts = query.points(states)
    i, j = np.triu_indices(states.size, k=1)
    return float(np.max(k_norm(hull, pts[i] - pts[j])))


@dataclass(frozen=True)
class AuditResult:
    levels: tuple[float, ...]
    overall: float

    def to_dict(self) -> dict:
        return {"levels": list(self.levels), "overall": self.overall}


def audit_blowfish_database(
    secret_answers,
    base_answer,
    graph: PolicyGraph | None = None,
    epsilon: float = 1.0,
    hull: Polytope | None = None,
) -> AuditResult:
    """Effective unbounded-DP level of each secret under a K-norm release.

    ``secret_answers[:, i]`` is the query answer on the database with secret
    ``i`` added; ``base_answer`` is the answer on the database itself.  The
    hull comes from ``graph`` over the secrets unless one is passed in.
    """
    answers = MeasurementQuery(secret_answers)
    base = np.asarray(base_answer, dtype=float).reshape(answers.dim)
    if hull is None:
        if graph is None:
            raise ValueError("either a policy graph or a hull is required")
        hull = sensitivity_hull(difference_set(graph, answers))
    norms = np.atleast_1d(k_norm(hull, answers.points() - base[None, :]))
    levels = tuple(float(epsilon * n) if n > 0 else 0.0 for n in norms)
    return AuditResult(levels, max(levels) if levels else 0.0)


# -- release loop ---------------------------------------------------------------

@dataclass
class StepRecord:
    t: int
    true_state: int
    z: np.ndarray
    epsilon: float
    factor: float
    dop_true: int
    error: float
    constraint: Constraint
    repaired_edges: tuple[tuple[int, int], ...]
    protectable: bool
    singleton: bool
    posterior_support: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "z": [float(x) for x in self.z],
            "dop_true_state": self.dop_true,
            "error_l2": self.error,
            "epsilon_spent": self.epsilon,
            "factor": _json_float(self.factor),
            "repaired_edges": [list(e) for e in self.repaired_edges],
            "constraint_size": len(self.constraint),
            "singleton": self.singleton,
        }


@dataclass
class ReleaseSession:
    """Mutable state of one user's release stream.

    ``belief`` is the posterior after the last release (the initial belief
    before any); ``t`` is the timestamp of that belief.
    """

    model: MarkovModel
    query: MeasurementQuery
    graph: PolicyGraph
    epsilon: float = 1.0
    mechanism: str = "knorm"
    repair: str = "greedy"
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    belief: BeliefState | None = None
    schedule: Sequence[float] | None = None
    query_id: str = "f"
    ledger: PrivacyLedger = field(default_factory=PrivacyLedger)
    history: list[StepRecord] = field(default_factory=list)

    def __post_init__(self):
        n = self.model.n_states
        if self.query.n_states != n or self.graph.n_states != n:
            raise DimensionMismatchError(
                f"model has {n} states, query {self.query.n_states}, graph {self.graph.n_states}"
            )
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}")
        if self.repair not in REPAIRS:
            raise ValueError(f"unknown repair strategy {self.repair!r}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.belief is None:
            self.belief = BeliefState.uniform(n)

    @classmethod
    def seeded(cls, model, query, graph, seed, **kwargs) -> "ReleaseSession":
        return cls(model, query, graph, rng=np.random.default_rng(seed), **kwargs)

    @property
    def t(self) -> int:
        return self.belief.timestamp

    def next_epsilon(self) -> float:
        if self.schedule is None:
            return self.epsilon
        i = len(self.history)
        if i >= len(self.schedule):
            raise IndexError("epsilon schedule exhausted")
        return float(self.schedule[i])


def release_step(session: ReleaseSession, true_state: int, epsilon_t: float | None = None) -> NoisyAnswer:
    """Release a perturbed answer for the next timestamp and update the session."""
    eps = session.next_epsilon() if epsilon_t is None else float(epsilon_t)
    if not eps > 0:
        raise ValueError("epsilon must be positive")
    query = session.query
    prior = propagate(session.belief, session.model)
    t = prior.timestamp
    constraint = extract_constraint(prior)
    if true_state not in constraint:
        raise ModelInconsistencyError(
            f"true state {true_state} has zero prior probability at t={t}"
        )
    truth = query.answer(true_state)

    if len(constraint) == 1:
        z = truth.copy()
        noisy = NoisyAnswer(z, t, eps, None, session.mechanism, None, True)
        posterior = BeliefState(prior.probs, "posterior", t, prior.log_weights)
        _record(session, t, true_state, noisy, eps, 0.0, 1, constraint, (), True, True, posterior)
        return noisy

    base = restrict(session.graph, constraint)
    fixed = repair(base, constraint, query, session.repair)
    added = tuple(sorted(fixed.edge_set() - base.edge_set()))
    diffs = difference_set(fixed, query)
    K = sensitivity_hull(diffs)
    dops = _all_dops(K, diffs.columns, constraint.as_array(), query)
    protectable = min(dops.values()) > 1
    states = constraint.as_array()

    if session.mechanism == "knorm":
        noisy = knorm_sample(truth, K, eps, session.rng, timestamp=t)
        factor = constrained_dp_factor(constraint, query, K)
        loglik = lambda z, idx: knorm_log_density(z, query.points(idx), K, eps)
    else:
        s_f = l1_sensitivity(fixed, query)
        noisy = laplace_sample(truth, s_f, eps, session.rng, timestamp=t)
        if s_f > 0:
            factor = constrained_dp_factor(constraint, query, cross_polytope(s_f, query.dim))
        else:
            factor = 0.0 if np.ptp(query.points(states), axis=0).max() == 0 else math.inf
        loglik = lambda z, idx: laplace_log_density(z, query.points(idx), s_f, eps)

    posterior = posterior_update(prior, noisy.z, loglik, log=True)
    _record(session, t, true_state, noisy, eps, factor, dops[int(true_state)], constraint, added, protectable, False, posterior)
    return noisy


def _record(session, t, true_state, noisy, eps, factor, dop, constraint, added, protectable, singleton, posterior):
    session.belief = posterior
    session.ledger.append(LedgerRecord(t, eps, factor, session.query_id, singleton))
    error = float(np.linalg.norm(noisy.z - session.query.answer(true_state)))
    session.history.append(StepRecord(
        t, int(true_state), noisy.z, eps, factor, int(dop), error, constraint, added,
        protectable, singleton, tuple(int(s) for s in posterior.support),
    ))


def initial_belief(kind: str, model: MarkovModel, first_state: int | None = None) -> BeliefState:
    """``point`` (mass on the first observed state), ``uniform`` or ``stationary``."""
    n = model.n_states
    if kind == "point":
        if first_state is None:
            raise ValueError("a point-mass initial belief needs the first state")
        return BeliefState.point_mass(n, first_state)
    if kind == "uniform":
        return BeliefState.uniform(n)
    if kind == "stationary":
        p = np.full(n, 1.0 / n)
        for _ in range(10_000):
            nxt = p @ model.transition
            if np.abs(nxt - p).sum() < 1e-14:
                break
            p = nxt
        return BeliefState(p / p.sum())
    raise ValueError(f"unknown initial belief {kind!r}")


def run_session(session: ReleaseSession, states: Sequence[int]) -> list[StepRecord]:
    """Release one answer per state in ``states`` (timestamps continue from the session)."""
    for s in states:
        release_step(session, int(s))
    return session.history
