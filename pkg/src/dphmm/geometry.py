"""Measurement-space geometry: difference sets, sensitivity hulls, K-norms.

Two-dimensional hulls and containment use exact integer predicates whenever
the inputs are integers after scaling by a power of ten; everything else
falls back to floating point.  Hulls of any dimension are stored with an
orthonormal basis of their linear span, so lower-dimensional (degenerate)
hulls keep working: vectors off the span have infinite K-norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import ConvexHull

from .errors import DimensionMismatchError, UnsupportedDimensionError
from .policy import PolicyGraph

SPAN_TOL = 1e-9
CONTAIN_TOL = 1e-9
QP_MAX_ITER = 100_000

_EXACT_SCALES = tuple(10**k for k in range(7))
# keeps every 2x2 determinant of coordinate differences inside int64
_EXACT_BOUND = 2**28
_SNAP_ULPS = 8 * np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class MeasurementQuery:
    """``answers[:, i]`` is f(s_i) in measurement units (a d x N matrix)."""

    answers: np.ndarray

    def __post_init__(self):
        a = np.array(self.answers, dtype=float)
        if a.ndim == 1:
            a = a[None, :]
        if a.ndim != 2 or a.shape[1] == 0:
            raise DimensionMismatchError(f"answers must be a d x N matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("query answers must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "answers", a)

    @property
    def dim(self) -> int:
        return self.answers.shape[0]

    @property
    def n_states(self) -> int:
        return self.answers.shape[1]

    def answer(self, state: int) -> np.ndarray:
        return self.answers[:, state]

    def points(self, states=None) -> np.ndarray:
        """Answers as rows, optionally for a subset of states."""
        cols = self.answers.T
        return cols if states is None else cols[np.asarray(states, dtype=int)]


@dataclass(frozen=True, eq=False)
class DifferenceSet:
    """Signed answer differences over policy edges, one column each.

    ``provenance[c] = (j, k, sign)`` means column ``c`` is
    ``sign * (f(s_j) - f(s_k))`` for the canonical edge ``(j, k)``.
    """

    columns: np.ndarray
    provenance: tuple[tuple[int, int, int], ...] = field(default_factory=tuple)

    @property
    def dim(self) -> int:
        return self.columns.shape[0]

    def __len__(self) -> int:
        return self.columns.shape[1]


def difference_set(graph: PolicyGraph, query: MeasurementQuery) -> DifferenceSet:
    if graph.n_states != query.n_states:
        raise DimensionMismatchError(
            f"graph has {graph.n_states} states but the query answers {query.n_states}"
        )
    d = query.dim
    if not graph.edges:
        return DifferenceSet(np.zeros((d, 0)), ())
    e = np.asarray(graph.edges, dtype=int)
    a = query.answers
    diff = a[:, e[:, 0]] - a[:, e[:, 1]]
    cols = np.empty((d, 2 * len(e)))
    cols[:, 0::2] = diff
    cols[:, 1::2] = -diff
    cols += 0.0  # no negative zeros
    prov = []
    for j, k in graph.edges:
        prov.append((j, k, 1))
        prov.append((j, k, -1))
    return DifferenceSet(cols, tuple(prov))


# -- exact 2-D predicates -------------------------------------------------------

def integer_scale(*arrays) -> int | None:
    """Smallest power of ten turning every entry into a (small) integer."""
    flat = np.concatenate([np.ravel(np.asarray(a, dtype=float)) for a in arrays]) if arrays else np.zeros(0)
    if flat.size == 0:
        return 1
    for s in _EXACT_SCALES:
        scaled = flat * s
        rounded = np.round(scaled)
        # only float rounding of a true decimal may be snapped away
        if np.all(np.abs(scaled - rounded) <= _SNAP_ULPS * np.maximum(1.0, np.abs(scaled))):
            return s if np.all(np.abs(rounded) < _EXACT_BOUND) else None
    return None


def _to_int(a, scale: int) -> np.ndarray:
    return np.round(np.asarray(a, dtype=float) * scale).astype(np.int64)


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def monotone_chain(points, tol=0) -> list[tuple]:
    """Andrew's monotone chain; counterclockwise, collinear points dropped.

    ``points`` are 2-tuples of ints (exact) or floats (with ``tol`` as the
    collinearity slack).  Degenerate inputs return one or two points.
    """
    pts = sorted(set(points))
    if len(pts) <= 2:
        return pts
    lower: list[tuple] = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= tol:
            lower.pop()
        lower.append(p)
    upper: list[tuple] = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= tol:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) == 2 and hull[0] == hull[1]:
        return hull[:1]
    return hull


# -- polytopes ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Polytope:
    """Convex hull of a finite point set, with its linear-span frame.

    ``vertices`` are rows in ambient coordinates (counterclockwise when the
    hull is a polygon).  ``basis`` is a d x intrinsic_dim orthonormal frame,
    ``coords`` the vertices expressed in it.  ``scale`` is set when the 2-D
    hull was built with exact integer arithmetic; ``int_vertices`` then holds
    ``vertices * scale``.
    """

    dim: int
    vertices: np.ndarray
    intrinsic_dim: int
    basis: np.ndarray
    coords: np.ndarray
    generators: np.ndarray | None = None
    scale: int | None = None
    int_vertices: np.ndarray | None = None

    @property
    def is_exact(self) -> bool:
        return self.scale is not None

    @cached_property
    def facets(self) -> tuple[np.ndarray, np.ndarray]:
        """``(A, c)`` with the hull equal to ``{y : A y <= c}`` in span coordinates."""
        k = self.intrinsic_dim
        if k < 2:
            raise UnsupportedDimensionError("facets are only tabulated for intrinsic dimension >= 2")
        if k == 2:
            if self.is_exact and self.dim == 2:
                v = self.int_vertices
                nxt = np.roll(v, -1, axis=0)
                edge = nxt - v
                normals = np.stack([edge[:, 1], -edge[:, 0]], axis=1)
                offsets = np.einsum("ij,ij->i", normals, v)
                return normals.astype(float), offsets.astype(float) / self.scale
            v = self.coords
            edge = np.roll(v, -1, axis=0) - v
            normals = np.stack([edge[:, 1], -edge[:, 0]], axis=1)
            return normals, np.einsum("ij,ij->i", normals, v)
        hull = ConvexHull(self.coords)
        eq = np.unique(np.round(hull.equations, 12), axis=0)
        return eq[:, :-1], -eq[:, -1]

    def to_span(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Span coordinates of row vectors and a mask of which lie on the span."""
        v = np.atleast_2d(np.asarray(v, dtype=float))
        if self.intrinsic_dim == self.dim and self.dim == 2 and self.is_exact:
            return v, np.ones(len(v), dtype=bool)
        y = v @ self.basis
        resid = np.linalg.norm(v - y @ self.basis.T, axis=1)
        return y, resid <= SPAN_TOL * (1.0 + np.linalg.norm(v, axis=1))


def _point_polytope(d: int, point, generators) -> Polytope:
    p = np.asarray(point, dtype=float).reshape(1, d)
    return Polytope(d, p, 0, np.zeros((d, 0)), np.zeros((1, 0)), generators)


def _segment_frame(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    u = (q - p) / np.linalg.norm(q - p)
    basis = u[:, None]
    return basis, np.array([[p @ u], [q @ u]])


def hull_of_points(points, generators=None) -> Polytope:
    """Convex hull of the rows of ``points`` (an m x d array)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise DimensionMismatchError("points must be an m x d array")
    d = pts.shape[1]
    if pts.shape[0] == 0:
        return _point_polytope(d, np.zeros(d), generators)
    if d == 2:
        scale = integer_scale(pts)
        if scale is not None:
            ipts = _to_int(pts, scale)
            hull = monotone_chain([tuple(map(int, p)) for p in ipts])
            iv = np.array(hull, dtype=np.int64)
            verts = iv / scale
            return _from_2d_chain(verts, generators, scale, iv)
        mag = float(np.abs(pts).max()) or 1.0
        hull = monotone_chain([tuple(map(float, p)) for p in pts], tol=1e-12 * mag * mag)
        return _from_2d_chain(np.array(hull, dtype=float), generators, None, None)
    return _generic_hull(pts, generators)


def _from_2d_chain(verts: np.ndarray, generators, scale, iv) -> Polytope:
    if len(verts) == 1:
        return Polytope(2, verts, 0, np.zeros((2, 0)), np.zeros((1, 0)), generators, scale, iv)
    if len(verts) == 2:
        basis, coords = _segment_frame(verts[0], verts[1])
        return Polytope(2, verts, 1, basis, coords, generators, scale, iv)
    return Polytope(2, verts, 2, np.eye(2), verts, generators, scale, iv)


def _generic_hull(pts: np.ndarray, generators) -> Polytope:
    d = pts.shape[1]
    pts = np.unique(pts, axis=0)
    _, sv, vt = np.linalg.svd(pts, full_matrices=False)
    top = sv[0] if sv.size else 0.0
    rank = int(np.sum(sv > 1e-10 * top)) if top > 0 else 0
    if rank == 0:
        return _point_polytope(d, pts[0], generators)
    basis = vt[:rank].T
    y = pts @ basis
    if rank == 1:
        lo, hi = int(np.argmin(y[:, 0])), int(np.argmax(y[:, 0]))
        verts = pts[[lo, hi]]
        return Polytope(d, verts, 1, basis, y[[lo, hi]], generators)
    if rank == 2:
        mag = float(np.abs(y).max())
        chain = monotone_chain([tuple(map(float, p)) for p in y], tol=1e-12 * mag * mag)
        coords = np.array(chain)
        return Polytope(d, coords @ basis.T, 2, basis, coords, generators)
    hull = ConvexHull(y)
    idx = hull.vertices
    return Polytope(d, y[idx] @ basis.T, rank, basis, y[idx], generators)


def sensitivity_hull(diffs) -> Polytope:
    """Convex hull of the difference columns; the origin when there are none."""
    cols = diffs.columns if isinstance(diffs, DifferenceSet) else np.asarray(diffs, dtype=float)
    return hull_of_points(cols.T, generators=cols)


# -- norms and containment ------------------------------------------------------------

def k_norm(polytope: Polytope, v):
    """Minkowski functional ``inf{r > 0 : v in rK}``.

    Accepts one vector or a stack of row vectors; returns ``inf`` for vectors
    outside the hull's linear span.
    """
    arr = np.asarray(v, dtype=float)
    single = arr.ndim == 1
    rows = np.atleast_2d(arr)
    if rows.shape[1] != polytope.dim:
        raise DimensionMismatchError(f"vector dimension {rows.shape[1]} != hull dimension {polytope.dim}")
    out = _k_norm_rows(polytope, rows)
    return float(out[0]) if single else out


def _k_norm_rows(K: Polytope, v: np.ndarray) -> np.ndarray:
    k = K.intrinsic_dim
    if k == 0:
        vnorm = np.linalg.norm(v, axis=1)
        origin = np.linalg.norm(K.vertices[0])
        return np.where(vnorm <= SPAN_TOL * (1.0 + origin), 0.0, np.inf)
    if k == 1:
        p, q = K.vertices
        w = q - p
        s = v @ w
        up, down = q @ w, p @ w
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(s > 0, s / up, np.where(s < 0, s / down, 0.0))
        r = np.where((s > 0) & (up <= 0) | (s < 0) & (down >= 0), np.inf, r)
        resid = np.linalg.norm(v - np.outer(s / (w @ w), w), axis=1)
        off = resid > SPAN_TOL * (1.0 + np.linalg.norm(v, axis=1))
        return np.where(off, np.inf, r)
    y, on = K.to_span(v)
    A, c = K.facets
    proj = y @ A.T
    pos = c > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(pos, proj / np.where(pos, c, 1.0), np.where(proj > 0, np.inf, 0.0))
    r = np.maximum(ratios.max(axis=1), 0.0)
    return np.where(on, r, np.inf)


def contains_points(K: Polytope, v) -> np.ndarray:
    """Boundary-inclusive membership of each row of ``v`` in ``K``.

    Exact when both the hull and the queries live on a common integer grid
    (2-D); otherwise uses the K-norm with a relative slack.
    """
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if K.dim == 2 and K.is_exact:
        s = integer_scale(v)
        if s is not None:
            scale = max(s, K.scale)
            iv = _to_int(v, scale)
            verts = K.int_vertices * (scale // K.scale)
            if np.all(np.abs(verts) < _EXACT_BOUND):
                return _exact_contains(verts, iv)
    return _k_norm_rows(K, v) <= 1.0 + CONTAIN_TOL


def _exact_contains(verts: np.ndarray, v: np.ndarray) -> np.ndarray:
    if len(verts) == 1:
        return np.all(v == verts[0], axis=1)
    if len(verts) == 2:
        p, q = verts
        w = q - p
        cr = w[0] * (v[:, 1] - p[1]) - w[1] * (v[:, 0] - p[0])
        a = (v - p) @ w
        b = (v - q) @ (-w)
        return (cr == 0) & (a >= 0) & (b >= 0)
    nxt = np.roll(verts, -1, axis=0)
    ex = (nxt - verts)[None, :, :]
    rel = v[:, None, :] - verts[None, :, :]
    cr = ex[..., 0] * rel[..., 1] - ex[..., 1] * rel[..., 0]
    return np.all(cr >= 0, axis=1)


def min_norm_point(points: np.ndarray, tol: float = 1e-12, max_iter: int = QP_MAX_ITER):
    """Wolfe's algorithm: the point of minimum Euclidean norm in conv(points).

    Returns ``(x, weights)`` where ``weights`` is a full-length convex
    combination with ``weights @ points == x``.
    """
    P = np.asarray(points, dtype=float)
    m = P.shape[0]
    sq = np.einsum("ij,ij->i", P, P)
    scale = max(float(sq.max()), 1e-300)
    S = [int(np.argmin(sq))]
    lam = np.array([1.0])
    x = P[S[0]].copy()
    for _ in range(max_iter):
        j = int(np.argmin(P @ x))
        if x @ x - P[j] @ x <= tol * scale or j in S:
            break
        S.append(j)
        lam = np.append(lam, 0.0)
        for _ in range(max_iter):
            alpha = _affine_minimizer(P[S])
            if np.all(alpha > tol):
                lam = alpha
                break
            shrink = alpha < lam
            theta = np.min(lam[shrink] / (lam[shrink] - alpha[shrink])) if shrink.any() else 1.0
            theta = min(max(theta, 0.0), 1.0)
            lam = theta * alpha + (1.0 - theta) * lam
            keep = lam > tol
            if keep.all():
                keep[int(np.argmin(lam))] = False
            S = [s for s, k in zip(S, keep) if k]
            lam = lam[keep]
            lam = lam / lam.sum()
        x = lam @ P[S]
    weights = np.zeros(m)
    weights[S] = lam
    return x, weights


def _affine_minimizer(Q: np.ndarray) -> np.ndarray:
    n = Q.shape[0]
    kkt = np.zeros((n + 1, n + 1))
    kkt[:n, :n] = Q @ Q.T
    kkt[:n, n] = 1.0
    kkt[n, :n] = 1.0
    rhs = np.zeros(n + 1)
    rhs[n] = 1.0
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return sol[:n]


def contains(diffs, v) -> bool:
    """Is ``v`` in the convex hull of the difference columns (boundary included)?

    2-D inputs use exact half-plane tests against the hull edges.  Other
    dimensions solve ``min 1/2 ||D x - v||^2`` over the probability simplex
    and accept when the residual is within ``1e-9 * (1 + ||v||)``.
    """
    cols = diffs.columns if isinstance(diffs, DifferenceSet) else np.asarray(diffs, dtype=float)
    v = np.asarray(v, dtype=float)
    if cols.shape[0] != v.shape[0]:
        raise DimensionMismatchError("vector and difference set dimensions differ")
    if cols.shape[1] == 0:
        return bool(np.linalg.norm(v) <= CONTAIN_TOL)
    if cols.shape[0] == 2:
        return bool(contains_points(sensitivity_hull(cols), v)[0])
    return qp_contains(cols, v)


def qp_contains(cols: np.ndarray, v: np.ndarray) -> bool:
    x, _ = min_norm_point(cols.T - v[None, :])
    return bool(np.linalg.norm(x) <= CONTAIN_TOL * (1.0 + np.linalg.norm(v)))


# -- measure and sampling -------------------------------------------------------------

def shoelace2(points) -> float:
    """Twice the signed area of a polygon given by ordered vertices."""
    p = np.asarray(points)
    x, y = p[:, 0], p[:, 1]
    return x @ np.roll(y, -1) - y @ np.roll(x, -1)


def hull_measure(polytope: Polytope) -> float:
    """Area for polygons, length for segments, 0 for a point."""
    k = polytope.intrinsic_dim
    if k == 0:
        return 0.0
    if k == 1:
        return float(np.linalg.norm(polytope.vertices[1] - polytope.vertices[0]))
    if k == 2:
        if polytope.is_exact and polytope.dim == 2:
            twice = int(shoelace2(polytope.int_vertices))
            return abs(twice) / (2.0 * polytope.scale**2)
        return abs(float(shoelace2(polytope.coords))) / 2.0
    raise UnsupportedDimensionError(
        f"measure of a {k}-dimensional hull is not supported (only up to 2)"
    )


def sample_uniform(polytope: Polytope, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Uniform draws from the polytope (segments and polygons only)."""
    n = 1 if size is None else int(size)
    k = polytope.intrinsic_dim
    if k == 0:
        out = np.repeat(polytope.vertices[:1], n, axis=0)
    elif k == 1:
        p, q = polytope.vertices
        t = rng.random(n)
        out = p[None, :] + t[:, None] * (q - p)[None, :]
    elif k == 2:
        out = _sample_polygon(polytope.coords, rng, n) @ polytope.basis.T
    else:
        raise UnsupportedDimensionError(
            f"uniform sampling from a {k}-dimensional hull is not supported"
        )
    return out[0] if size is None else out


def _sample_polygon(verts: np.ndarray, rng: np.random.Generator, n: int) -> np.ndarray:
    c = verts.mean(axis=0)
    a = verts - c
    b = np.roll(verts, -1, axis=0) - c
    areas = np.abs(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
    tri = rng.choice(len(verts), size=n, p=areas / areas.sum())
    u = rng.random((n, 2))
    flip = u.sum(axis=1) > 1
    u[flip] = 1.0 - u[flip]
    return c + u[:, :1] * a[tri] + u[:, 1:] * b[tri]


def query_from_dict(doc: dict) -> MeasurementQuery:
    """Read the ``"query"`` entry of a model file (a d x N matrix)."""
    return MeasurementQuery(np.asarray(doc["query"], dtype=float))
