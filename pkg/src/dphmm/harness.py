"""Synthetic experiments: grid worlds, parameter sweeps, metric files."""

from __future__ import annotations

import csv
import itertools
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DPHMMError
from .geometry import MeasurementQuery, query_from_dict
from .markov import MarkovModel, read_model, read_trajectories, sample_trajectory
from .policy import GraphSpec, build_policy, parse_policy_arg
from .release import ReleaseSession, initial_belief, release_step

METRICS_HEADER = ("trajectory", "t", "dop", "error", "epsilon", "factor", "runtime_ms")
FORMATS = ("csv", "jsonl")


@dataclass(frozen=True)
class GridWorld:
    model: MarkovModel
    query: MeasurementQuery
    trajectories: list[list[int]]
    side: int


def grid_transition(side: int) -> np.ndarray:
    """Random walk to the 4-neighbours, uniform over those inside the grid."""
    n = side * side
    m = np.zeros((n, n))
    for r, c in itertools.product(range(side), range(side)):
        nbrs = [(r + dr, c + dc) for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1))]
        nbrs = [(a, b) for a, b in nbrs if 0 <= a < side and 0 <= b < side]
        for a, b in nbrs:
            m[r * side + c, a * side + b] = 1.0 / len(nbrs)
    return m


def grid_query(side: int, cell: float = 1.0) -> MeasurementQuery:
    """Cell centres; state ``row * side + col`` answers ``((col + .5) cell, (row + .5) cell)``."""
    rows, cols = np.divmod(np.arange(side * side), side)
    return MeasurementQuery(np.vstack([(cols + 0.5) * cell, (rows + 0.5) * cell]))


def generate_grid_world(side: int, seed=0, n_trajectories: int = 20, length: int = 101, cell: float = 1.0) -> GridWorld:
    if side < 2:
        raise ValueError("grid side must be at least 2")
    model = MarkovModel(grid_transition(side))
    rng = np.random.default_rng(seed)
    starts = rng.integers(0, model.n_states, size=n_trajectories)
    trajs = [sample_trajectory(model, int(s), length, rng) for s in starts]
    return GridWorld(model, grid_query(side, cell), trajs, side)


def stationary_distribution(model: MarkovModel, tol: float = 1e-14, max_iter: int = 1_000_000) -> np.ndarray:
    """Power iteration from the uniform vector (lazy steps avoid periodic chains)."""
    n = model.n_states
    lazy = 0.5 * (np.eye(n) + model.transition)
    p = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = p @ lazy
        if np.abs(nxt - p).sum() < tol:
            return nxt
        p = nxt
    return p


# -- configuration ------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    grid: int | None = 8
    model_file: str | None = None
    trajectory_file: str | None = None
    policies: list[str] = field(default_factory=lambda: ["transition"])
    epsilons: list[float] = field(default_factory=lambda: [1.0])
    radii: list[float] = field(default_factory=lambda: [1.0])
    timesteps: int = 100
    trajectories: int = 20
    seed: int = 0
    repair: str = "greedy"
    mechanism: str = "knorm"
    initial: str = "point"

    def __post_init__(self):
        if self.timesteps < 1:
            raise ValueError("timesteps must be at least 1")
        if self.trajectories < 1:
            raise ValueError("need at least one trajectory")
        for name in ("epsilons", "radii"):
            vals = [float(v) for v in getattr(self, name)]
            if any(not v > 0 for v in vals):
                raise ValueError(f"all {name} must be positive")
            setattr(self, name, vals)
        if self.grid is None and self.model_file is None:
            raise ValueError("either a grid size or a model file is required")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    def cells(self) -> list[tuple[str, float, float | None]]:
        """``(policy, epsilon, radius)`` in sweep order; radius only for utility policies."""
        out = []
        for pol in self.policies:
            radii = self.radii if pol in ("util", "utility") else [None]
            if pol.startswith("util:"):
                radii = [float(pol.split(":", 1)[1])]
                pol = "util"
            for r in radii:
                for eps in self.epsilons:
                    out.append((pol, eps, r))
        return out


@dataclass(frozen=True)
class MetricsRow:
    trajectory: int
    t: int
    dop: int
    error: float
    epsilon: float
    factor: float
    runtime_ms: float


@dataclass
class CellResult:
    policy: str
    epsilon: float
    radius: float | None
    rows: list[MetricsRow]
    error: str | None = None

    @property
    def key(self) -> str:
        r = "-" if self.radius is None else _fmt(self.radius)
        return f"{self.policy}_eps{_fmt(self.epsilon)}_r{r}"

    def summary(self) -> dict:
        n = len(self.rows)
        doc = {"policy": self.policy, "epsilon": self.epsilon, "radius": self.radius, "rows": n, "error": self.error}
        if n:
            err = np.array([r.error for r in self.rows])
            doc["mean_dop"] = float(np.mean([r.dop for r in self.rows]))
            doc["rms_error"] = float(np.sqrt(np.mean(err**2)))
            doc["mean_runtime_ms"] = float(np.mean([r.runtime_ms for r in self.rows]))
        return doc


def _q(x: float) -> float:
    # rows carry exactly what the metric files can represent
    return float(_fmt(x))


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.9g}"


# -- running ----------------------------------------------------------------------------

def _load_world(config: ExperimentConfig):
    """Model, query, trajectories and the optional categorical policy spec."""
    length = config.timesteps + 1
    if config.model_file is not None:
        model, doc = read_model(config.model_file)
        query = query_from_dict(doc)
        categ = GraphSpec.from_dict(doc["policy"]) if "policy" in doc else None
        if config.trajectory_file is not None:
            trajs = list(read_trajectories(config.trajectory_file).values())[: config.trajectories]
            trajs = [tr[:length] for tr in trajs]
        else:
            rng = np.random.default_rng(config.seed)
            starts = rng.integers(0, model.n_states, size=config.trajectories)
            trajs = [sample_trajectory(model, int(s), length, rng) for s in starts]
        return model, query, trajs, categ
    world = generate_grid_world(config.grid, config.seed, config.trajectories, length)
    return world.model, world.query, world.trajectories, None


def _policy_graph(policy: str, radius, model, query, categ):
    if policy in ("util", "utility"):
        spec = GraphSpec("utility", radius=radius)
    elif policy == "categorical":
        if categ is None or categ.kind != "categorical":
            raise ValueError("categorical policy needs categories in the model file")
        spec = categ
    else:
        spec = parse_policy_arg(policy)
    return build_policy(spec, query=query, model=model)


def run_cell(config, policy, epsilon, radius, world, clock: Callable[[], float] = time.perf_counter) -> CellResult:
    model, query, trajs, categ = world
    cell = CellResult(policy, epsilon, radius, [])
    try:
        graph = _policy_graph(policy, radius, model, query, categ)
        for k, tr in enumerate(trajs):
            session = ReleaseSession(
                model, query, graph, epsilon=epsilon, mechanism=config.mechanism, repair=config.repair,
                rng=np.random.default_rng([config.seed, k]),
                belief=initial_belief(config.initial, model, tr[0]),
            )
            for s in tr[1:]:
                start = clock()
                release_step(session, s)
                elapsed = (clock() - start) * 1000.0
                h = session.history[-1]
                cell.rows.append(MetricsRow(k, h.t, h.dop_true, _q(h.error), _q(h.epsilon), _q(h.factor), _q(elapsed)))
    except (DPHMMError, ValueError) as exc:
        cell.error = f"{type(exc).__name__}: {exc}"
    return cell


def run_experiment(config: ExperimentConfig, clock: Callable[[], float] = time.perf_counter) -> list[CellResult]:
    """Run every sweep cell; a failing cell keeps its partial rows and an error message."""
    world = _load_world(config)
    return [run_cell(config, p, e, r, world, clock) for p, e, r in config.cells()]


# -- metric files ---------------------------------------------------------------------------

def _ordered(rows: Sequence[MetricsRow]) -> list[MetricsRow]:
    return sorted(rows, key=lambda r: (r.trajectory, r.t))


def write_metrics(rows: Sequence[MetricsRow], path, format: str = "csv") -> None:
    if format not in FORMATS:
        raise ValueError(f"unknown metrics format {format!r}")
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            if format == "csv":
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(METRICS_HEADER)
                for r in _ordered(rows):
                    w.writerow([_fmt(getattr(r, k)) for k in METRICS_HEADER])
            else:
                for r in _ordered(rows):
                    doc = {k: getattr(r, k) for k in METRICS_HEADER}
                    # 9 significant digits, and "inf" rather than non-standard JSON
                    body = ", ".join(f'"{k}": {_json_num(v)}' for k, v in doc.items())
                    fh.write("{" + body + "}\n")
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc}") from exc


def _json_num(v) -> str:
    s = _fmt(v)
    return f'"{s}"' if "inf" in s or "nan" in s else s


def _row_from(doc: dict) -> MetricsRow:
    return MetricsRow(
        int(doc["trajectory"]), int(doc["t"]), int(doc["dop"]),
        float(doc["error"]), float(doc["epsilon"]), float(doc["factor"]), float(doc["runtime_ms"]),
    )


def read_metrics(path, format: str | None = None) -> list[MetricsRow]:
    path = Path(path)
    fmt = format or ("jsonl" if path.suffix == ".jsonl" else "csv")
    try:
        with open(path, newline="") as fh:
            if fmt == "csv":
                reader = csv.DictReader(fh)
                if tuple(reader.fieldnames or ()) != METRICS_HEADER:
                    raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
                return [_row_from(d) for d in reader]
            return [_row_from(json.loads(line)) for line in fh if line.strip()]
    except OSError as exc:
        raise OSError(f"cannot read metrics from {path}: {exc}") from exc


def write_results(cells: Sequence[CellResult], out, format: str = "csv") -> list[Path]:
    """One metrics file per cell (suffixed with the cell key when there are
    several) plus ``<stem>_summary.json``."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    paths = []
    for cell in cells:
        p = out if len(cells) == 1 else out.with_name(f"{out.stem}_{cell.key}{out.suffix}")
        write_metrics(cell.rows, p, format)
        paths.append(p)
    summary = out.with_name(f"{out.stem}_summary.json")
    summary.write_text(json.dumps([c.summary() for c in cells], indent=2) + "\n")
    paths.append(summary)
    return paths


def smooth(values, window: int = 5) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` points average what is available."""
    v = np.asarray(values, dtype=float)
    if window < 1:
        raise ValueError("window must be positive")
    c = np.cumsum(np.concatenate([[0.0], v]))
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)
