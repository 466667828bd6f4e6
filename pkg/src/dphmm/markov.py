"""Markov state model, belief propagation and Bayesian updates.

Beliefs are row vectors over the N abstract states.  The forward step is
``prior_t = posterior_{t-1} @ M`` and the observation step is the usual
Bayes rule with a caller-supplied likelihood, so the same update serves any
perturbation mechanism.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import (
    DimensionMismatchError,
    ImpossibleObservationError,
    InvalidBeliefError,
    InvalidModelError,
)

# Probabilities at or below this are structural zeros, not support.
ZERO_THRESHOLD = 1e-12
ROW_SUM_TOL = 1e-9

TRAJECTORY_HEADER = ("trajectory_id", "t", "state_index")


@dataclass(frozen=True, eq=False)
class MarkovModel:
    """First-order, time-homogeneous chain; ``transition[i, j] = Pr(i -> j)``."""

    transition: np.ndarray

    def __post_init__(self):
        m = np.array(self.transition, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
            raise InvalidModelError(f"transition must be a non-empty square matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)) or np.any(m < 0) or np.any(m > 1):
            raise InvalidModelError("transition entries must lie in [0, 1]")
        bad = np.flatnonzero(np.abs(m.sum(axis=1) - 1.0) > ROW_SUM_TOL)
        if bad.size:
            raise InvalidModelError(f"rows {bad.tolist()} do not sum to 1")
        m.setflags(write=False)
        object.__setattr__(self, "transition", m)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    def successors(self, state: int) -> np.ndarray:
        return np.flatnonzero(self.transition[state] > ZERO_THRESHOLD)


@dataclass(frozen=True, eq=False)
class BeliefState:
    """Probability vector over states plus its log-space twin.

    ``log_weights`` carries the support exactly: ``-inf`` marks an impossible
    state, anything finite is possible however small its probability.  When
    a belief is built from plain probabilities, entries at or below
    ``ZERO_THRESHOLD`` are treated as impossible.
    """

    probs: np.ndarray
    kind: str = "posterior"
    timestamp: int = 0
    log_weights: np.ndarray | None = None

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 1:
            raise InvalidBeliefError("belief must be a vector")
        if self.kind not in ("prior", "posterior"):
            raise InvalidBeliefError(f"unknown belief kind {self.kind!r}")
        if np.any(p < 0) or np.any(p > 1 + ROW_SUM_TOL) or abs(p.sum() - 1.0) > ROW_SUM_TOL:
            raise InvalidBeliefError("belief entries must be probabilities summing to 1")
        if self.log_weights is None:
            with np.errstate(divide="ignore"):
                lw = np.where(p > ZERO_THRESHOLD, np.log(p), -np.inf)
        else:
            lw = np.array(self.log_weights, dtype=float)
            if lw.shape != p.shape:
                raise DimensionMismatchError("log weights and probabilities differ in length")
        if not np.any(np.isfinite(lw)):
            raise InvalidBeliefError("belief has no possible state")
        p.setflags(write=False)
        lw.setflags(write=False)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "log_weights", lw)

    @classmethod
    def from_log(cls, log_weights, kind: str = "posterior", timestamp: int = 0) -> "BeliefState":
        """Normalize unnormalized log weights (``-inf`` for impossible states)."""
        lw = np.asarray(log_weights, dtype=float)
        if np.any(np.isnan(lw)) or np.any(lw == np.inf):
            raise InvalidBeliefError("log weights must be finite or -inf")
        if not np.any(np.isfinite(lw)):
            raise InvalidBeliefError("belief has no possible state")
        lw = lw - logsumexp(lw)
        p = np.exp(lw)
        return cls(p / p.sum(), kind, timestamp, lw)

    @classmethod
    def point_mass(cls, n_states: int, state: int, kind: str = "posterior", timestamp: int = 0) -> "BeliefState":
        p = np.zeros(n_states)
        p[state] = 1.0
        return cls(p, kind, timestamp)

    @classmethod
    def uniform(cls, n_states: int, kind: str = "posterior", timestamp: int = 0) -> "BeliefState":
        return cls(np.full(n_states, 1.0 / n_states), kind, timestamp)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(np.isfinite(self.log_weights))


@dataclass(frozen=True)
class Constraint:
    """States an adversary cannot rule out at one timestamp, ascending."""

    states: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(sorted(set(int(s) for s in self.states))))

    def __contains__(self, state) -> bool:
        return int(state) in self.states

    def __len__(self) -> int:
        return len(self.states)

    def __iter__(self) -> Iterator[int]:
        return iter(self.states)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.states, dtype=int)


def _log_transition(model: MarkovModel) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(model.transition > ZERO_THRESHOLD, np.log(model.transition), -np.inf)


def propagate(belief: BeliefState, model: MarkovModel) -> BeliefState:
    """One Markov transition: the prior for the next timestamp.

    Computed as ``posterior @ M`` in log space so that reachable states keep
    a finite weight even when their probability underflows.
    """
    if belief.probs.shape[0] != model.n_states:
        raise DimensionMismatchError(
            f"belief has {belief.probs.shape[0]} states, model has {model.n_states}"
        )
    src = belief.support
    terms = belief.log_weights[src, None] + _log_transition(model)[src]
    with np.errstate(divide="ignore"):
        lw = logsumexp(terms, axis=0)
    return BeliefState.from_log(lw, "prior", belief.timestamp + 1)


def extract_constraint(prior: BeliefState) -> Constraint:
    """States the adversary cannot rule out (finite log weight)."""
    states = prior.support
    if states.size == 0:
        raise InvalidBeliefError("no state has positive probability")
    return Constraint(tuple(states.tolist()))


Likelihood = Callable[[np.ndarray, np.ndarray], np.ndarray]


def posterior_update(prior: BeliefState, released, likelihood: Likelihood, log: bool = False) -> BeliefState:
    """Bayes rule over the prior's support.

    ``likelihood(z, states)`` returns ``Pr(z | s)`` for each index in
    ``states`` (or its logarithm when ``log`` is true); any common positive
    scale factor is harmless.
    """
    z = np.asarray(released, dtype=float)
    states = prior.support
    lik = np.asarray(likelihood(z, states), dtype=float)
    if lik.shape != states.shape:
        raise DimensionMismatchError("likelihood must return one value per queried state")
    if log:
        if np.any(np.isnan(lik)) or np.any(lik == np.inf):
            raise ValueError("log likelihoods must be finite or -inf")
        ll = lik
    else:
        if np.any(lik < 0) or not np.all(np.isfinite(lik)):
            raise ValueError("likelihoods must be finite and nonnegative")
        with np.errstate(divide="ignore"):
            ll = np.log(lik)
    lw = np.full_like(prior.log_weights, -np.inf)
    lw[states] = prior.log_weights[states] + ll
    if not np.any(np.isfinite(lw)):
        raise ImpossibleObservationError(
            "observation has zero likelihood under every state in the constraint"
        )
    return BeliefState.from_log(lw, "posterior", prior.timestamp)


def learn_model(
    trajectories: Sequence[Sequence[int]],
    n_states: int | None = None,
    smoothing: float = 0.0,
) -> MarkovModel:
    """Maximum-likelihood transition counts with additive smoothing.

    Rows that never occur as a source (and get no smoothing mass) become
    self-loops so the result is always row-stochastic.
    """
    if not trajectories:
        raise ValueError("at least one trajectory is required")
    if smoothing < 0:
        raise ValueError("smoothing must be nonnegative")
    top = max(max(tr) for tr in trajectories if len(tr))
    n = top + 1 if n_states is None else n_states
    counts = np.zeros((n, n))
    for tr in trajectories:
        if len(tr) < 2:
            raise ValueError("each trajectory needs at least two steps")
        idx = np.asarray(tr, dtype=int)
        if idx.min() < 0 or idx.max() >= n:
            raise ValueError(f"state index out of range [0, {n})")
        np.add.at(counts, (idx[:-1], idx[1:]), 1.0)
    counts += smoothing
    totals = counts.sum(axis=1)
    idle = np.flatnonzero(totals == 0)
    counts[idle, idle] = 1.0
    totals[idle] = 1.0
    return MarkovModel(counts / totals[:, None])


def sample_trajectory(model: MarkovModel, start: int, length: int, rng: np.random.Generator) -> list[int]:
    path = [int(start)]
    cdf = np.cumsum(model.transition, axis=1)
    for _ in range(length - 1):
        row = cdf[path[-1]]
        nxt = int(np.searchsorted(row, rng.random() * row[-1], side="right"))
        path.append(min(nxt, model.n_states - 1))
    return path


# -- files -------------------------------------------------------------------

def model_from_dict(doc: dict) -> MarkovModel:
    model = MarkovModel(np.asarray(doc["transition"], dtype=float))
    if "n_states" in doc and int(doc["n_states"]) != model.n_states:
        raise InvalidModelError(
            f"n_states={doc['n_states']} disagrees with a {model.n_states}x{model.n_states} transition matrix"
        )
    return model


def model_to_dict(model: MarkovModel) -> dict:
    return {"n_states": model.n_states, "transition": model.transition.tolist()}


def read_model(path) -> tuple[MarkovModel, dict]:
    """Load a model JSON file; returns the model and the raw document."""
    with open(path) as fh:
        doc = json.load(fh)
    return model_from_dict(doc), doc


def write_model(model: MarkovModel, path, **extra) -> None:
    doc = model_to_dict(model)
    doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_trajectories(path) -> dict[str, list[int]]:
    by_id: dict[str, list[tuple[int, int]]] = defaultdict(list)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != TRAJECTORY_HEADER:
            raise ValueError(f"{path}: expected header {','.join(TRAJECTORY_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                tid, t, s = row[0].strip(), int(row[1]), int(row[2])
            except (IndexError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed row {row!r}") from exc
            by_id[tid].append((t, s))
    return {tid: [s for _, s in sorted(steps)] for tid, steps in by_id.items()}


def write_trajectories(trajectories: Iterable[Sequence[int]], path, ids: Iterable | None = None) -> None:
    trajectories = list(trajectories)
    ids = list(ids) if ids is not None else list(range(len(trajectories)))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for tid, tr in zip(ids, trajectories):
            for t, s in enumerate(tr):
                w.writerow([tid, t, int(s)])
