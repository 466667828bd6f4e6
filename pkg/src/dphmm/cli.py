"""Command-line entry point: ``hull``, ``audit``, ``release``, ``simulate``."""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from .errors import DPHMMError
from .geometry import difference_set, hull_measure, query_from_dict, sensitivity_hull
from .harness import ExperimentConfig, run_experiment, write_results
from .markov import Constraint, read_model, read_trajectories
from .mechanisms import l1_sensitivity
from .policy import GraphSpec, build_policy, parse_policy_arg, restrict
from .protection import protection_report
from .release import ReleaseSession, compose, initial_belief, release_step


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _load(path, graph_arg):
    model, doc = read_model(path)
    if "query" not in doc:
        raise DPHMMError(f"{path}: model file has no \"query\" matrix")
    query = query_from_dict(doc)
    if graph_arg is None or graph_arg == "categorical":
        if "policy" not in doc:
            raise DPHMMError(f"{path}: no \"policy\" object and no --graph given")
        spec = GraphSpec.from_dict(doc["policy"])
    else:
        spec = parse_policy_arg(graph_arg)
    return model, query, build_policy(spec, query=query, model=model)


def _dump(doc) -> None:
    sys.stdout.write(json.dumps(doc, allow_nan=False) + "\n")


def cmd_hull(args) -> int:
    model, query, graph = _load(args.model, args.graph)
    if args.constraint:
        graph = restrict(graph, args.constraint)
    diffs = difference_set(graph, query)
    K = sensitivity_hull(diffs)
    measure = hull_measure(K) if K.intrinsic_dim <= 2 else None
    _dump({
        "difference_set": diffs.columns.tolist(),
        "vertices": K.vertices.tolist(),
        "intrinsic_dim": K.intrinsic_dim,
        "area": measure if K.intrinsic_dim == 2 else 0.0,
        "measure": measure,
        "l1_sensitivity": l1_sensitivity(graph, query),
    })
    return 0


def cmd_audit(args) -> int:
    model, query, graph = _load(args.model, args.graph)
    constraint = Constraint(tuple(args.constraint or range(model.n_states)))
    _dump(protection_report(graph, constraint, query).to_dict())
    return 0


def cmd_release(args) -> int:
    model, query, graph = _load(args.model, args.graph)
    trajs = read_trajectories(args.trajectories)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        for k, (tid, states) in enumerate(trajs.items()):
            session = ReleaseSession(
                model, query, graph, epsilon=args.epsilon, mechanism=args.mechanism, repair=args.repair,
                rng=np.random.default_rng([args.seed, k]),
                belief=initial_belief(args.initial, model, states[0]),
            )
            for s in states[1:]:
                release_step(session, s)
                doc = {"trajectory": tid, **session.history[-1].to_dict()}
                out.write(json.dumps(doc, allow_nan=False) + "\n")
            if args.summary:
                sys.stderr.write(json.dumps({"trajectory": tid, **compose(session.ledger).to_dict()}, allow_nan=False) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_simulate(args) -> int:
    if args.config:
        config = ExperimentConfig.from_file(args.config)
    else:
        policies = args.policy or ["transition"]
        config = ExperimentConfig(
            grid=None if args.model else args.grid,
            model_file=args.model,
            trajectory_file=args.trajectories,
            policies=policies,
            epsilons=args.epsilon,
            radii=args.radius,
            timesteps=args.timesteps,
            trajectories=args.n_trajectories,
            seed=args.seed,
            repair=args.repair,
            mechanism=args.mechanism,
            initial=args.initial,
        )
    clock = (lambda: 0.0) if args.no_timing else time.perf_counter
    cells = run_experiment(config, clock=clock)
    paths = write_results(cells, args.out, args.format)
    for cell in cells:
        s = cell.summary()
        line = f"{cell.key}: rows={s['rows']}"
        if s["rows"]:
            line += f" mean_dop={s['mean_dop']:.4g} rms_error={s['rms_error']:.4g} mean_ms={s['mean_runtime_ms']:.3g}"
        if cell.error:
            line += f" ERROR {cell.error}"
        print(line)
    print("wrote " + ", ".join(str(p) for p in paths))
    return 1 if any(c.error for c in cells) else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dphmm", description="Private release of Markov-correlated query answers.")
    sub = p.add_subparsers(dest="command", required=True)

    graph_help = "policy graph: complete | transition | util:<r> | categorical (default: the model file's policy)"

    h = sub.add_parser("hull", help="difference set, sensitivity hull and l1 sensitivity of a policy")
    h.add_argument("--model", required=True, help="model JSON with transition, query and policy")
    h.add_argument("--graph", help=graph_help)
    h.add_argument("--constraint", type=_ints, help="comma-separated state indices to restrict to")
    h.set_defaults(func=cmd_hull)

    a = sub.add_parser("audit", help="degree of protection of every constraint state")
    a.add_argument("--model", required=True)
    a.add_argument("--graph", help=graph_help)
    a.add_argument("--constraint", type=_ints, help="comma-separated state indices (default: all)")
    a.set_defaults(func=cmd_audit)

    r = sub.add_parser("release", help="perturb trajectories step by step, JSON lines out")
    r.add_argument("--model", required=True)
    r.add_argument("--trajectories", required=True, help="CSV with trajectory_id,t,state_index")
    r.add_argument("--graph", help=graph_help)
    r.add_argument("--epsilon", type=float, default=1.0)
    r.add_argument("--mechanism", choices=("knorm", "laplace"), default="knorm")
    r.add_argument("--repair", choices=("greedy", "min2d"), default="greedy")
    r.add_argument("--initial", choices=("point", "uniform", "stationary"), default="point")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", help="output file (default stdout)")
    r.add_argument("--summary", action="store_true", help="print per-trajectory budget totals to stderr")
    r.set_defaults(func=cmd_release)

    s = sub.add_parser("simulate", help="run a parameter sweep and write metrics")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--grid", type=int, default=8, help="side of a synthetic grid world")
    src.add_argument("--model", help="model JSON instead of a grid world")
    s.add_argument("--trajectory-file", dest="trajectories", help="trajectories for --model (sampled if absent)")
    s.add_argument("--policy", action="append", help="complete | categorical | transition | util | util:<r>; repeatable")
    s.add_argument("--epsilon", type=_floats, default=[1.0], help="comma-separated list")
    s.add_argument("--radius", type=_floats, default=[1.0], help="comma-separated radii for util")
    s.add_argument("--timesteps", type=int, default=100)
    s.add_argument("--trajectories", dest="n_trajectories", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--repair", choices=("greedy", "min2d"), default="greedy")
    s.add_argument("--mechanism", choices=("knorm", "laplace"), default="knorm")
    s.add_argument("--initial", choices=("point", "uniform", "stationary"), default="point")
    s.add_argument("--config", help="JSON file with ExperimentConfig fields (overrides the flags)")
    s.add_argument("--out", default="metrics.csv")
    s.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    s.add_argument("--no-timing", action="store_true", help="record runtime_ms as 0 for byte-stable output")
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DPHMMError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
