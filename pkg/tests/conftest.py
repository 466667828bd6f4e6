import itertools

import numpy as np
import pytest

from dphmm.geometry import MeasurementQuery
from dphmm.markov import MarkovModel
from dphmm.policy import GraphSpec, PolicyGraph, build_policy

# six states in the plane, three categories
SIX_ANSWERS = np.array([[1, 2, 3, 0, 4, 1], [0, 1, 0, 1, 2, 2]])
SIX_CATEGORIES = (0, 1, 1, 2, 2, 2)
# undirected adjacency used to build a random-walk model over the six states
SIX_WALK_EDGES = ((0, 1), (0, 3), (1, 2), (1, 4), (1, 5), (2, 4), (3, 5), (4, 5))


def random_walk(n, edges):
    m = np.zeros((n, n))
    for i, j in edges:
        m[i, j] = m[j, i] = 1.0
    return m / m.sum(axis=1, keepdims=True)


@pytest.fixture
def six_query():
    return MeasurementQuery(SIX_ANSWERS)


@pytest.fixture
def six_categorical(six_query):
    return build_policy(GraphSpec("categorical", categories=SIX_CATEGORIES), query=six_query)


@pytest.fixture
def squares_graph():
    """Clique on the last category only."""
    return PolicyGraph(6, ((3, 4), (3, 5), (4, 5)))


@pytest.fixture
def six_model():
    return MarkovModel(random_walk(6, SIX_WALK_EDGES))


def all_pairs(n):
    return list(itertools.combinations(range(n), 2))
