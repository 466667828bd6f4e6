"""Policy graphs: which pairs of states must stay indistinguishable."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatchError, MissingInputError
from .markov import ZERO_THRESHOLD, Constraint, MarkovModel

KINDS = ("complete", "categorical", "utility", "transition")

_DISTANCES = {
    "l2": lambda a, b: float(np.linalg.norm(a - b)),
    "l1": lambda a, b: float(np.abs(a - b).sum()),
    "linf": lambda a, b: float(np.abs(a - b).max()),
}


def _canonical(i, j) -> tuple[int, int]:
    i, j = int(i), int(j)
    if i == j:
        raise ValueError(f"self-loop on state {i} is not a policy edge")
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class PolicyGraph:
    """Undirected graph over state indices ``0..n_states-1``.

    Self-membership in a neighbourhood is implicit, so self-loops are never
    stored.  ``edges`` iterates in canonical ``(min, max)`` lexicographic order.
    """

    n_states: int
    edges: tuple[tuple[int, int], ...] = field(default_factory=tuple)

    def __post_init__(self):
        canon = sorted({_canonical(i, j) for i, j in self.edges})
        for i, j in canon:
            if j >= self.n_states or i < 0:
                raise ValueError(f"edge ({i}, {j}) outside state space of size {self.n_states}")
        object.__setattr__(self, "edges", tuple(canon))
        object.__setattr__(self, "_lookup", frozenset(canon))

    def __len__(self) -> int:
        return len(self.edges)

    def has_edge(self, i: int, j: int) -> bool:
        return i != j and _canonical(i, j) in self._lookup

    def neighbours(self, state: int) -> set[int]:
        out = {state}
        for i, j in self.edges:
            if i == state:
                out.add(j)
            elif j == state:
                out.add(i)
        return out

    def with_edges(self, extra: Iterable[tuple[int, int]]) -> "PolicyGraph":
        return PolicyGraph(self.n_states, tuple(self.edges) + tuple(extra))

    def edge_set(self) -> frozenset[tuple[int, int]]:
        return self._lookup


@dataclass(frozen=True)
class GraphSpec:
    kind: str
    categories: tuple[int, ...] | None = None
    radius: float | None = None
    distance: str = "l2"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "categorical":
            if self.categories is None:
                raise MissingInputError("categorical policy needs a category per state")
            object.__setattr__(self, "categories", tuple(self.categories))
        if self.kind == "utility":
            if self.radius is None or not self.radius > 0:
                raise MissingInputError("utility policy needs a positive radius")
            if self.distance not in _DISTANCES:
                raise ValueError(f"unknown distance {self.distance!r}")

    @classmethod
    def from_dict(cls, doc: dict) -> "GraphSpec":
        """Parse the ``"policy"`` object of a model file.

        ``categories`` may be a per-state label list or a list of groups of
        state indices.
        """
        kind = doc["kind"]
        cats = doc.get("categories")
        if cats is not None and cats and isinstance(cats[0], (list, tuple)):
            labels = {}
            for label, group in enumerate(cats):
                for s in group:
                    labels[int(s)] = label
            cats = tuple(labels[s] for s in sorted(labels))
        return cls(kind, categories=cats, radius=doc.get("radius"), distance=doc.get("distance", "l2"))

    def to_dict(self) -> dict:
        doc: dict = {"kind": self.kind}
        if self.categories is not None:
            doc["categories"] = list(self.categories)
        if self.radius is not None:
            doc["radius"] = self.radius
            doc["distance"] = self.distance
        return doc


def build_policy(spec: GraphSpec, query=None, model: MarkovModel | None = None, n_states: int | None = None) -> PolicyGraph:
    """Instantiate one of the four policy families.

    ``query`` is a MeasurementQuery (or a d x N answer matrix) and is
    required for the utility family; ``model`` is required for the
    transition family.
    """
    answers = None
    if query is not None:
        answers = np.asarray(getattr(query, "answers", query), dtype=float)
        if answers.ndim == 1:
            answers = answers[None, :]
    sizes = {x for x in (
        n_states,
        None if answers is None else answers.shape[1],
        None if model is None else model.n_states,
        None if spec.categories is None else len(spec.categories),
    ) if x is not None}
    if len(sizes) > 1:
        raise DimensionMismatchError(f"inconsistent state-space sizes {sorted(sizes)}")
    if not sizes:
        raise MissingInputError("cannot infer the number of states")
    n = sizes.pop()

    if spec.kind == "complete":
        edges = combinations(range(n), 2)
    elif spec.kind == "categorical":
        edges = [(i, j) for i, j in combinations(range(n), 2) if spec.categories[i] == spec.categories[j]]
    elif spec.kind == "utility":
        if answers is None:
            raise MissingInputError("utility policy needs the measurement query")
        dist = _DISTANCES[spec.distance]
        cols = answers.T
        edges = [(i, j) for i, j in combinations(range(n), 2) if dist(cols[i], cols[j]) <= spec.radius]
    else:
        if model is None:
            raise MissingInputError("transition policy needs the Markov model")
        found = set()
        for i in range(n):
            succ = np.flatnonzero(model.transition[i] > ZERO_THRESHOLD)
            found.update(combinations(succ.tolist(), 2))
        edges = found
    return PolicyGraph(n, tuple(edges))


def restrict(graph: PolicyGraph, constraint: Constraint | Sequence[int]) -> PolicyGraph:
    """Keep only edges with both endpoints in the constraint (original indices)."""
    keep = set(int(s) for s in constraint)
    return PolicyGraph(graph.n_states, tuple(e for e in graph.edges if e[0] in keep and e[1] in keep))


def parse_policy_arg(text: str) -> GraphSpec:
    """CLI shorthand: ``complete``, ``transition``, ``util:<r>``."""
    if text.startswith("util:") or text.startswith("utility:"):
        return GraphSpec("utility", radius=float(text.split(":", 1)[1]))
    if text in ("complete", "transition"):
        return GraphSpec(text)
    raise ValueError(f"cannot parse policy {text!r}; categorical policies come from a model file")
