"""K-norm and Laplace perturbation: samplers, densities, sensitivities.

The K-norm density is ``exp(-eps ||z - x||_K) / (Gamma(k + 1) * measure(K / eps))``
where ``k`` is the intrinsic dimension of K and ``measure`` the matching
k-dimensional measure.  For a degenerate hull the density lives on the affine
span through the true answer and is zero elsewhere; for a single-point hull
the mechanism releases the true answer and the density is a point mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    SPAN_TOL,
    MeasurementQuery,
    Polytope,
    hull_measure,
    hull_of_points,
    k_norm,
    sample_uniform,
)
from .policy import PolicyGraph

MECHANISMS = ("knorm", "laplace")


@dataclass(frozen=True)
class MechanismConfig:
    epsilon: float = 1.0
    kind: str = "knorm"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.kind not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.kind!r}; expected one of {MECHANISMS}")


@dataclass(frozen=True, eq=False)
class NoisyAnswer:
    z: np.ndarray
    timestamp: int = 0
    epsilon_spent: float = 0.0
    hull_used: Polytope | None = None
    mechanism: str = "knorm"
    # the Gamma radius of a K-norm draw; None for Laplace and exact releases
    radius: float | None = None
    exact: bool = False


def _check_eps(epsilon):
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")


def l1_sensitivity(graph: PolicyGraph, query: MeasurementQuery) -> float:
    """Largest l1 answer difference across policy edges (0 without edges)."""
    if not graph.edges:
        return 0.0
    e = np.asarray(graph.edges, dtype=int)
    a = query.answers
    return float(np.abs(a[:, e[:, 0]] - a[:, e[:, 1]]).sum(axis=0).max())


def cross_polytope(radius: float, dim: int) -> Polytope:
    """The l1 ball ``{x : ||x||_1 <= radius}``."""
    if not radius > 0:
        raise ValueError("cross polytope radius must be positive")
    eye = np.eye(dim) * radius
    pts = np.vstack([eye, -eye])
    return hull_of_points(pts, generators=pts.T)


def knorm_noise(polytope: Polytope, epsilon: float, rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
    """``size`` noise rows ``r u`` and their Gamma radii ``r``.

    ``r`` is a sum of ``k + 1`` unit exponentials over ``eps`` (Gamma with
    integer shape) and ``u`` is uniform in K.
    """
    _check_eps(epsilon)
    k = polytope.intrinsic_dim
    if k == 0:
        return np.zeros((size, polytope.dim)), np.zeros(size)
    r = rng.standard_exponential((size, k + 1)).sum(axis=1) / epsilon
    u = sample_uniform(polytope, rng, size)
    return r[:, None] * u, r


def knorm_sample(true_answer, polytope: Polytope, epsilon: float, rng: np.random.Generator, timestamp: int = 0) -> NoisyAnswer:
    """``z = x + r u`` with ``u`` uniform in K and ``r ~ Gamma(k + 1, rate eps)``."""
    x = np.asarray(true_answer, dtype=float)
    if polytope.intrinsic_dim == 0:
        _check_eps(epsilon)
        return NoisyAnswer(x.copy(), timestamp, epsilon, polytope, "knorm", None, True)
    noise, r = knorm_noise(polytope, epsilon, rng, 1)
    return NoisyAnswer(x + noise[0], timestamp, epsilon, polytope, "knorm", float(r[0]), False)


def knorm_log_density(z, true_answers, polytope: Polytope, epsilon: float):
    """Log density of the K-norm mechanism; accepts a stack of true answers."""
    _check_eps(epsilon)
    z = np.asarray(z, dtype=float)
    x = np.asarray(true_answers, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    k = polytope.intrinsic_dim
    if k == 0:
        gap = np.linalg.norm(z[None, :] - x, axis=1)
        out = np.where(gap <= SPAN_TOL * (1.0 + np.linalg.norm(z)), 0.0, -np.inf)
    else:
        norms = np.atleast_1d(k_norm(polytope, z[None, :] - x))
        log_norm = math.lgamma(k + 1) + math.log(hull_measure(polytope)) - k * math.log(epsilon)
        out = -epsilon * norms - log_norm
    return float(out[0]) if single else out


def knorm_density(z, true_answer, polytope: Polytope, epsilon: float):
    return np.exp(knorm_log_density(z, true_answer, polytope, epsilon))


def laplace_sample(true_answer, s_f: float, epsilon: float, rng: np.random.Generator, timestamp: int = 0) -> NoisyAnswer:
    _check_eps(epsilon)
    x = np.asarray(true_answer, dtype=float)
    if s_f == 0:
        return NoisyAnswer(x.copy(), timestamp, epsilon, None, "laplace", None, True)
    if s_f < 0:
        raise ValueError("sensitivity must be nonnegative")
    noise = rng.laplace(0.0, s_f / epsilon, size=x.shape)
    return NoisyAnswer(x + noise, timestamp, epsilon, None, "laplace", None, False)


def laplace_log_density(z, true_answers, s_f: float, epsilon: float):
    _check_eps(epsilon)
    z = np.asarray(z, dtype=float)
    x = np.asarray(true_answers, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    d = x.shape[1]
    if s_f == 0:
        out = np.where(np.all(x == z[None, :], axis=1), 0.0, -np.inf)
    else:
        l1 = np.abs(z[None, :] - x).sum(axis=1)
        out = d * (math.log(epsilon) - math.log(2.0 * s_f)) - (epsilon / s_f) * l1
    return float(out[0]) if single else out


def laplace_density(z, true_answer, s_f: float, epsilon: float):
    """``eps^d / (2 s_f)^d * exp(-(eps / s_f) ||z - x||_1)``."""
    return np.exp(laplace_log_density(z, true_answer, s_f, epsilon))
