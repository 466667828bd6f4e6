"""End-to-end acceptance checks; each prints one PASS/FAIL line.

States are zero-indexed here: ``s1`` of the running six-state example is state 0.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
from scipy import stats

from conftest import SIX_ANSWERS, SIX_CATEGORIES
from oracles import hull_vertices_int, in_conv_int, random_symmetric_generators, shoelace
from dphmm.geometry import (
    MeasurementQuery,
    contains,
    difference_set,
    hull_measure,
    k_norm,
    sensitivity_hull,
)
from dphmm.harness import ExperimentConfig, generate_grid_world, run_experiment, write_results
from dphmm.markov import Constraint
from dphmm.mechanisms import (
    cross_polytope,
    knorm_density,
    knorm_noise,
    l1_sensitivity,
    laplace_density,
    laplace_sample,
)
from dphmm.policy import GraphSpec, PolicyGraph, build_policy, restrict
from dphmm.protection import degree_of_protection, min_repair_2d, protection_report
from dphmm.release import ReleaseSession, audit_blowfish_database, compose, initial_belief, release_step

QUERY = MeasurementQuery(SIX_ANSWERS)
GRAPH = build_policy(GraphSpec("categorical", categories=SIX_CATEGORIES), query=QUERY)


@contextmanager
def criterion(n, title):
    try:
        yield
    except BaseException as exc:
        print(f"\nFAIL criterion {n}: {title} ({type(exc).__name__}: {exc})")
        raise
    print(f"\nPASS criterion {n}: {title}")


def best_ms(fn, repeat=25):
    """Best wall time of ``repeat`` calls after one warm-up call."""
    fn()
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append((time.perf_counter() - start) * 1000)
    return min(times)


def test_criterion_1_worked_geometry():
    with criterion(1, "difference set and l1 sensitivity of the six-state example"):
        expected = np.array([[-1, 1, -4, 4, -1, 1, 3, -3], [1, -1, -1, 1, -1, 1, 0, 0]])
        cols = difference_set(GRAPH, QUERY).columns
        assert cols.shape == (2, 8)
        assert np.array_equal(cols, expected)
        assert l1_sensitivity(GRAPH, QUERY) == 5
        assert l1_sensitivity(restrict(GRAPH, Constraint((1, 2, 4))), QUERY) == 2

        def work():
            difference_set(GRAPH, QUERY)
            l1_sensitivity(GRAPH, QUERY)
            l1_sensitivity(restrict(GRAPH, Constraint((1, 2, 4))), QUERY)

        ms = best_ms(work)
        assert ms < 1.0, f"{ms:.3f} ms"


def test_criterion_2_dop():
    with criterion(2, "DoP 3 for s2 and 1 for s3 under their constraints"):
        c_a, c_b = Constraint((1, 3, 4, 5)), Constraint((2, 3, 4, 5))
        d_a = difference_set(restrict(GRAPH, c_a), QUERY)
        d_b = difference_set(restrict(GRAPH, c_b), QUERY)
        assert degree_of_protection(1, d_a, c_a, QUERY) == 3
        assert degree_of_protection(2, d_b, c_b, QUERY) == 1

        def work():
            degree_of_protection(1, difference_set(restrict(GRAPH, c_a), QUERY), c_a, QUERY)
            degree_of_protection(2, difference_set(restrict(GRAPH, c_b), QUERY), c_b, QUERY)

        ms = best_ms(work)
        assert ms < 1.0, f"{ms:.3f} ms"


def _oracle_area(generators):
    verts = np.array(sorted(hull_vertices_int(generators.T), key=lambda p: math.atan2(p[1], p[0])))
    return shoelace(verts)


def test_criterion_3_min_repair():
    with criterion(3, "minimum-area repair picks {s3,s4} with areas 14 < 16 < 20"):
        c = Constraint((2, 3, 4, 5))
        base = restrict(GRAPH, c)
        trace = []
        fixed = min_repair_2d(base, c, QUERY, trace=trace)
        assert fixed.edge_set() - base.edge_set() == {(2, 3)}
        (state, areas, chosen), = trace
        assert state == 2 and chosen == 3
        assert areas[3] < areas[4] < areas[5]
        cols = difference_set(base, QUERY).columns
        for j, area in areas.items():
            v = (QUERY.answer(2) - QUERY.answer(j)).astype(np.int64)
            oracle = _oracle_area(np.column_stack([cols.astype(np.int64), v, -v]))
            assert abs(area - oracle) <= 1e-12 * max(1.0, oracle), (j, area, oracle)
        assert (areas[3], areas[4], areas[5]) == (14.0, 16.0, 20.0)

        ms = best_ms(lambda: min_repair_2d(base, c, QUERY))
        assert ms < 10.0, f"{ms:.3f} ms"


def test_criterion_4_laplace_ratio():
    with criterion(4, "Laplace density ratio e^(1.5 eps) with S_f = 2"):
        x5, x3 = QUERY.answer(4), QUERY.answer(2)
        for eps in (0.1, 0.5, 1.0, 2.0, 3.7):
            ratio = laplace_density(x5, x5, 2.0, eps) / laplace_density(x5, x3, 2.0, eps)
            want = math.exp(1.5 * eps)
            assert abs(ratio - want) <= 1e-12 * want, (eps, ratio, want)


def test_criterion_5_database_audit():
    with criterion(5, "per-secret audit levels {e, 0, e, 2e, e, 2e}"):
        secrets = np.array([[11, 10, 11, 10, 11, 10], [20, 20, 20, 21, 20, 21]])
        graph = PolicyGraph(6, ((0, 1), (2, 3)))
        for eps in (1.0, 0.25, 3.0):
            res = audit_blowfish_database(secrets, [10, 20], graph, epsilon=eps)
            assert res.levels == (eps, 0.0, eps, 2 * eps, eps, 2 * eps)
            assert res.overall == 2 * eps


def test_criterion_6_laplace_is_cross_polytope_knorm():
    with criterion(6, "Laplace equals K-norm on the cross polytope; hull vertices within S_f"):
        rng = np.random.default_rng(6)
        z = rng.uniform(-20, 20, size=(10_000, 2))
        x = rng.uniform(-5, 5, size=(10_000, 2))
        s_f = rng.uniform(0.2, 6.0, size=10_000)
        eps = rng.uniform(0.1, 3.0, size=10_000)
        worst = 0.0
        for zi, xi, si, ei in zip(z, x, s_f, eps):
            lap = laplace_density(zi, xi, si, ei)
            kn = knorm_density(zi, xi, cross_polytope(si, 2), ei)
            worst = max(worst, abs(lap - kn) / lap)
        assert worst <= 1e-12, worst

        for _ in range(100):
            n = int(rng.integers(2, 12))
            q = MeasurementQuery(rng.integers(-6, 7, size=(2, n)))
            pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.4]
            g = PolicyGraph(n, tuple(pairs))
            K = sensitivity_hull(difference_set(g, q))
            s = l1_sensitivity(g, q)
            assert np.all(np.abs(K.vertices).sum(axis=1) <= s)


def _ratio_histogram(sample_a, sample_b, density_a, density_b, n, half_width, w):
    edges = np.arange(-half_width, half_width + w, w)
    ha, _, _ = np.histogram2d(sample_a[:, 0], sample_a[:, 1], bins=[edges, edges])
    hb, _, _ = np.histogram2d(sample_b[:, 0], sample_b[:, 1], bins=[edges, edges])
    centres = edges[:-1] + w / 2
    grid = np.stack(np.meshgrid(centres, centres, indexing="ij"), -1).reshape(-1, 2)
    ea = (density_a(grid) * n * w * w).reshape(ha.shape)
    eb = (density_b(grid) * n * w * w).reshape(hb.shape)
    mask = (ea >= 500) & (eb >= 500)
    ratio = np.maximum(ha[mask] / hb[mask], hb[mask] / ha[mask])
    return float(ratio.max()), int(mask.sum())


def test_criterion_7_sampler():
    with criterion(7, "K-norm radius law and DP-ratio histograms for both mechanisms"):
        K = sensitivity_hull(difference_set(GRAPH, QUERY))
        eps = 1.0
        rng = np.random.default_rng(0)

        noise, r = knorm_noise(K, eps, rng, 100_000)
        k = K.intrinsic_dim
        ks_r = stats.kstest(r, stats.gamma(k + 1, scale=1 / eps).cdf).statistic
        assert ks_r < 0.01, ks_r
        # the released distance itself follows Gamma(k); see the decisions ledger
        ks_z = stats.kstest(k_norm(K, noise), stats.gamma(k, scale=1 / eps).cdf).statistic
        assert ks_z < 0.01, ks_z

        n = 10**6
        limit = math.exp(eps) * 1.15
        # states s4 and s5 differ by a hull vertex: the tightest pair
        xa, xb = QUERY.answer(3), QUERY.answer(4)
        assert k_norm(K, xa - xb) == 1.0
        za = xa + knorm_noise(K, eps, rng, n)[0]
        zb = xb + knorm_noise(K, eps, rng, n)[0]
        peak = eps**k / (math.gamma(k + 1) * hull_measure(K))
        worst, cells = _ratio_histogram(
            za, zb,
            lambda g: peak * np.exp(-eps * k_norm(K, g - xa)),
            lambda g: peak * np.exp(-eps * k_norm(K, g - xb)),
            n, 20.0, 0.25,
        )
        assert cells > 100 and worst <= limit, (worst, cells)

        # l1 distance equal to the sensitivity: the tightest Laplace pair
        s_f = 2.0
        xa, xb = np.array([0.0, 0.0]), np.array([1.5, -0.5])
        za = laplace_sample(np.tile(xa, (n, 1)), s_f, eps, rng).z
        zb = laplace_sample(np.tile(xb, (n, 1)), s_f, eps, rng).z
        worst, cells = _ratio_histogram(
            za, zb,
            lambda g: laplace_density(np.zeros(2), g - xa, s_f, eps),
            lambda g: laplace_density(np.zeros(2), g - xb, s_f, eps),
            n, 20.0, 0.25,
        )
        assert cells > 100 and worst <= limit, (worst, cells)


def test_criterion_8_oracle_equivalence():
    with criterion(8, "2-D hull and containment equal brute force on 1000 instances"):
        rng = np.random.default_rng(8)
        for _ in range(1000):
            G = random_symmetric_generators(rng, max_pairs=12)
            assert G.shape[1] <= 24
            K = sensitivity_hull(G)
            assert {tuple(int(a) for a in v) for v in K.vertices} == hull_vertices_int(G.T)
            probes = np.vstack([rng.integers(-8, 9, size=(8, 2)), G.T[:2]])
            for v in probes:
                assert contains(G, v) == in_conv_int(v, G.T)


def _grid_sessions(world, policy_spec, epsilon=1.0, seed=0):
    graph = build_policy(policy_spec, query=world.query, model=world.model)
    sessions = []
    for k, tr in enumerate(world.trajectories):
        s = ReleaseSession(
            world.model, world.query, graph, epsilon=epsilon,
            rng=np.random.default_rng([seed, k]), belief=initial_belief("point", world.model, tr[0]),
        )
        for state in tr[1:]:
            release_step(s, state)
        sessions.append(s)
    return graph, sessions


def _fake_clock():
    ticks = iter(range(10**9))
    return lambda: next(ticks) * 1e-3


def test_criterion_9_release_invariants(tmp_path):
    with criterion(9, "8x8 grid release loop: protectable, support, ledger, reproducible"):
        world = generate_grid_world(8, seed=0, n_trajectories=20, length=101)
        steps = 0
        for spec in (GraphSpec("transition"), GraphSpec("utility", radius=1.0)):
            graph, sessions = _grid_sessions(world, spec)
            for s in sessions:
                assert len(s.history) == 100
                for h in s.history:
                    steps += 1
                    assert set(h.posterior_support) <= set(h.constraint.states)
                    if h.singleton:
                        continue
                    assert h.protectable
                    fixed = restrict(graph, h.constraint).with_edges(h.repaired_edges)
                    report = protection_report(fixed, h.constraint, world.query)
                    assert report.protectable and min(report.dop.values()) >= 2
                spent = [h.epsilon for h in s.history]
                assert s.ledger.total_epsilon == math.fsum(spent)
                assert compose(s.ledger).dphmm_total == math.fsum(spent)
        assert steps == 2 * 20 * 100

        cfg = ExperimentConfig(grid=8, policies=["transition", "util"], radii=[1.0],
                               timesteps=100, trajectories=20, seed=0)
        blobs = []
        for run in ("a", "b"):
            paths = write_results(run_experiment(cfg, clock=_fake_clock()), tmp_path / run / "m.csv")
            blobs.append([p.read_bytes() for p in paths])
        assert blobs[0] == blobs[1]


def test_criterion_10_orderings():
    with criterion(10, "DoP and error orderings across policies and epsilon"):
        cfg = ExperimentConfig(grid=8, policies=["transition", "util", "complete"], radii=[1.0],
                               epsilons=[0.5, 1.0, 2.0], timesteps=100, trajectories=20, seed=0)
        cells = run_experiment(cfg, clock=_fake_clock())
        assert all(c.error is None for c in cells)
        by = {(c.policy, c.epsilon): c for c in cells}
        eps_list = cfg.epsilons
        for eps in eps_list:
            trs, util, comp = (by[p, eps].summary() for p in ("transition", "util", "complete"))
            assert trs["mean_dop"] >= util["mean_dop"], (eps, trs["mean_dop"], util["mean_dop"])
            assert util["rms_error"] <= comp["rms_error"], (eps, util["rms_error"], comp["rms_error"])
        for pol in ("transition", "util", "complete"):
            errs = [by[pol, e].summary()["rms_error"] for e in eps_list]
            assert errs[0] > errs[1] > errs[2], (pol, errs)
            dops = [[r.dop for r in by[pol, e].rows] for e in eps_list]
            assert dops[0] == dops[1] == dops[2], pol
