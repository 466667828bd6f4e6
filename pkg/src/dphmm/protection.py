"""Exposure detection and policy-graph repair.

A state is protected when some other constraint state's answer lies in
``f(s) + K``; the degree of protection (DoP) counts those states plus the
state itself.  Both repairs visit exposed states in ascending index order,
skip states an earlier edge already protected, and break ties toward the
lowest state index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CannotProtectError, UnsupportedDimensionError
from .geometry import (
    DifferenceSet,
    MeasurementQuery,
    Polytope,
    contains_points,
    difference_set,
    hull_measure,
    hull_of_points,
    qp_contains,
    sensitivity_hull,
)
from .markov import Constraint
from .policy import PolicyGraph, restrict


@dataclass(frozen=True)
class ProtectionReport:
    dop: dict[int, int]
    exposed: frozenset[int]
    protectable: bool

    def to_dict(self) -> dict:
        return {
            "dop": {str(s): d for s, d in sorted(self.dop.items())},
            "exposed": sorted(self.exposed),
            "protectable": self.protectable,
        }


def _members(K: Polytope, cols: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    if K.dim == 2:
        return contains_points(K, vectors)
    if cols.shape[1] == 0:
        return np.linalg.norm(vectors, axis=1) <= 1e-9
    return np.array([qp_contains(cols, v) for v in vectors], dtype=bool)


def _dop_of(state: int, K: Polytope, cols: np.ndarray, states: np.ndarray, query: MeasurementQuery) -> int:
    others = states[states != state]
    if others.size == 0:
        return 1
    vec = query.points(others) - query.answer(state)[None, :]
    return 1 + int(_members(K, cols, vec).sum())


def degree_of_protection(
    state: int,
    diffs: DifferenceSet,
    constraint: Constraint,
    query: MeasurementQuery,
    hull: Polytope | None = None,
) -> int:
    if state not in constraint:
        raise ValueError(f"state {state} is not in the constraint")
    K = sensitivity_hull(diffs) if hull is None else hull
    return _dop_of(int(state), K, diffs.columns, constraint.as_array(), query)


def _all_dops(K: Polytope, cols: np.ndarray, states: np.ndarray, query: MeasurementQuery) -> dict[int, int]:
    n = states.size
    if n == 0:
        return {}
    if K.dim != 2:
        return {int(s): _dop_of(int(s), K, cols, states, query) for s in states}
    pts = query.points(states)
    vec = (pts[None, :, :] - pts[:, None, :]).reshape(-1, 2)
    inside = contains_points(K, vec).reshape(n, n)
    np.fill_diagonal(inside, True)
    counts = inside.sum(axis=1)
    return {int(s): int(c) for s, c in zip(states, counts)}


def protection_report(graph: PolicyGraph, constraint: Constraint, query: MeasurementQuery) -> ProtectionReport:
    g = restrict(graph, constraint)
    diffs = difference_set(g, query)
    K = sensitivity_hull(diffs)
    dop = _all_dops(K, diffs.columns, constraint.as_array(), query)
    exposed = frozenset(s for s, d in dop.items() if d == 1)
    return ProtectionReport(dop, exposed, not exposed)


def _setup(graph, constraint, query):
    if len(constraint) < 2:
        raise CannotProtectError(
            f"constraint {list(constraint)} has no second state to connect to"
        )
    g = restrict(graph, constraint)
    diffs = difference_set(g, query)
    return g, diffs, sensitivity_hull(diffs), constraint.as_array()


def greedy_repair(graph: PolicyGraph, constraint: Constraint, query: MeasurementQuery) -> PolicyGraph:
    """Connect every exposed state to its nearest (l2) constraint state."""
    g, diffs, K, states = _setup(graph, constraint, query)
    cols = diffs.columns
    initial = _all_dops(K, cols, states, query)
    for i in sorted(s for s, d in initial.items() if d == 1):
        if _dop_of(i, K, cols, states, query) > 1:
            continue
        cand = np.array([s for s in states if s != i and not g.has_edge(i, s)], dtype=int)
        if cand.size == 0:
            continue
        dist = ((query.points(cand) - query.answer(i)) ** 2).sum(axis=1)
        j = int(cand[int(np.argmin(dist))])
        g = g.with_edges([(i, j)])
        v = query.answer(i) - query.answer(j)
        cols = np.concatenate([cols, v[:, None], -v[:, None]], axis=1)
        K = sensitivity_hull(cols)
    return g


def planar_area(K: Polytope) -> float:
    """Two-dimensional area; segments and points have none."""
    return hull_measure(K) if K.intrinsic_dim == 2 else 0.0


def candidate_areas(K: Polytope, state: int, candidates, query: MeasurementQuery) -> dict[int, float]:
    """Hull area after adding the edge ``{state, j}`` for each candidate ``j``."""
    out = {}
    base = K.vertices
    for j in candidates:
        v = query.answer(state) - query.answer(int(j))
        out[int(j)] = planar_area(hull_of_points(np.vstack([base, v, -v])))
    return out


def min_repair_2d(
    graph: PolicyGraph,
    constraint: Constraint,
    query: MeasurementQuery,
    trace: list | None = None,
) -> PolicyGraph:
    """Per exposed state, add the edge whose hull has the smallest area.

    When ``trace`` is a list, one ``(state, {candidate: area}, chosen)``
    tuple is appended per committed edge.
    """
    if query.dim != 2:
        raise UnsupportedDimensionError("minimum-area repair is defined for 2-D queries only")
    g, diffs, K, states = _setup(graph, constraint, query)
    cols = diffs.columns
    initial = _all_dops(K, cols, states, query)
    for i in sorted(s for s, d in initial.items() if d == 1):
        if _dop_of(i, K, cols, states, query) > 1:
            continue
        cand = [int(s) for s in states if s != i and not g.has_edge(i, s)]
        if not cand:
            continue
        areas = candidate_areas(K, i, cand, query)
        best = min(cand, key=lambda j: (areas[j], j))
        if trace is not None:
            trace.append((i, areas, best))
        g = g.with_edges([(i, best)])
        v = query.answer(i) - query.answer(best)
        cols = np.concatenate([cols, v[:, None], -v[:, None]], axis=1)
        K = sensitivity_hull(cols)
    return g


def repair(graph: PolicyGraph, constraint: Constraint, query: MeasurementQuery, strategy: str = "greedy") -> PolicyGraph:
    if strategy == "greedy":
        return greedy_repair(graph, constraint, query)
    if strategy == "min2d":
        return min_repair_2d(graph, constraint, query)
    raise ValueError(f"unknown repair strategy {strategy!r}")
