"""Acceptance suite: one test and one printed PASS/FAIL line per criterion.

Tolerances and runtime budgets are fixed here and must not be loosened.
Large-coupling runs are evidence runs compared against values pinned in
``regression_pins.json``.
"""
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate

from errwlab.environment import (FieldConfig, diagonal_minor, laplacian, log_density_joint_wus,
                                 log_density_u, log_density_us)
from errwlab.graph import Graph, cycle_graph, path_graph, random_connected_graph, single_edge, triangle
from errwlab.lattice import LatticeBox, build_diamond, cube_region
from errwlab.mcmc import McmcParams, sample_field_mcmc
from errwlab.network import (ChiParams, ConductanceNetwork, effective_resistance,
                             effective_resistance_to_set, flow_energy, hitting_probability,
                             min_energy_flow)
from errwlab.spread import b_triangle_margin, conductance_bound_margin, resistance_bound_check, select_h, spread_flow
from errwlab.walkers import (enumerate_paths, errw_path_probability, escape_probability_experiment,
                             path_law, sample_paths, total_variation)
from errwlab.ward import (WardSpec, WardTerm, fluctuation_estimate, good_point_check,
                          moment_bound_estimate, protected_ward_estimate, run_chains,
                          transience_pipeline_check, ward_identity_estimate)

import oracles

PINS = json.loads((Path(__file__).with_name("regression_pins.json")).read_text())


@pytest.fixture
def report(capsys):
    """Print one PASS/FAIL line, then assert the outcome and the runtime budget."""
    def _report(n, title, checks, start, budget):
        elapsed = time.perf_counter() - start
        checks = dict(checks)
        checks[f"runtime {elapsed:.1f}s < {budget}s"] = elapsed < budget
        ok = all(checks.values())
        failed = [k for k, v in checks.items() if not v]
        with capsys.disabled():
            line = f"[criterion {n:2d}] {'PASS' if ok else 'FAIL'}  {title}"
            if failed:
                line += "  (failed: " + "; ".join(failed) + ")"
            print("\n" + line)
        assert ok, failed
    return _report


def _edge_density(a):
    g = single_edge()
    return lambda u, s: math.exp(log_density_us([a], FieldConfig(g, [0.0, u], [0.0, s])).total)


# ---------------------------------------------------------------- 1

def test_criterion_01_matrix_tree(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst, spread = 0.0, 0.0
    for _ in range(100):
        n = int(rng.integers(2, 7))
        g = random_connected_graph(n, rng, p=float(rng.uniform(0.1, 0.9)))
        c = rng.uniform(0.05, 5.0, g.n_edges)
        ref = oracles.spanning_tree_sum(n, g.edges, c)
        L = laplacian(n, g.edges, c)
        vals = np.array([diagonal_minor(L, k) for k in range(n)])
        worst = max(worst, float(np.max(np.abs(vals / ref - 1))))
        spread = max(spread, float((vals.max() - vals.min()) / ref))
    report(1, f"matrix-tree: max rel err {worst:.1e}, removed-index spread {spread:.1e}",
           {"rel err <= 1e-9": worst <= 1e-9, "spread <= 1e-9": spread <= 1e-9}, t0, 5)


# ---------------------------------------------------------------- 2

def test_criterion_02_electrical_identities(report):
    t0 = time.perf_counter()
    exact = [
        effective_resistance(ConductanceNetwork(single_edge(), [2.0]), 0, 1) - 0.5,
        effective_resistance(ConductanceNetwork(path_graph(3), [1.0, 1.0]), 0, 2) - 2.0,
        effective_resistance(ConductanceNetwork(path_graph(3), [2.0, 3.0]), 0, 2) - (1 / 2 + 1 / 3),
        effective_resistance(ConductanceNetwork(cycle_graph(4), np.ones(4)), 0, 2) - 1.0,
        effective_resistance(ConductanceNetwork(Graph(2, [(0, 1)]), [5.0]), 0, 1) - 0.2,
        hitting_probability(ConductanceNetwork(path_graph(3), [1.0, 1.0]), 0, [2]) - 0.5,
    ]
    rng = np.random.default_rng(2)
    thomson, escape_identity = 0.0, 0.0
    for _ in range(100):
        g = random_connected_graph(6, rng)
        net = ConductanceNetwork(g, rng.uniform(0.1, 4.0, g.n_edges))
        x, y = rng.choice(6, 2, replace=False)
        R = effective_resistance(net, int(x), int(y))
        thomson = max(thomson, abs(flow_energy(net, min_energy_flow(net, int(x), int(y))) / R - 1))
        targets = [int(v) for v in rng.choice([v for v in range(6) if v != x],
                                               int(rng.integers(1, 4)), replace=False)]
        P = hitting_probability(net, int(x), targets)
        Rs = effective_resistance_to_set(net, int(x), targets)
        escape_identity = max(escape_identity, abs(net.vertex_conductance[x] * Rs * P - 1))
    ex = max(abs(v) for v in exact)
    report(2, f"electrical: exact {ex:.1e}, Thomson {thomson:.1e}, c_x R P - 1 {escape_identity:.1e}",
           {"exact <= 1e-12": ex <= 1e-12, "Thomson <= 1e-8": thomson <= 1e-8,
            "c_x R P = 1 to 1e-8": escape_identity <= 1e-8}, t0, 10)


# ---------------------------------------------------------------- 3

def test_criterion_03_normalisations(report):
    t0 = time.perf_counter()
    g = single_edge()
    rho_err = 0.0
    for w in (0.5, 1.5, 4.0):
        f = lambda u: math.exp(log_density_u([w], FieldConfig(g, [0.0, u], [0.0, 0.0])).total)
        rho_err = max(rho_err, abs(integrate.quad(f, -40, 40, limit=400, points=[0.0])[0] - 1))
    mu_err = abs(oracles.single_edge_moment_quadrature(3.0, 0.0, _edge_density(3.0)) - 1)
    marg = 0.0
    for a, u, s in [(0.5, 0.0, 0.0), (1.0, 0.7, -0.3), (3.0, -1.2, 0.8), (4.0, 2.0, 1.5), (8.0, -0.4, -2.0)]:
        cfg = FieldConfig(g, [0.0, u], [0.0, s])
        lhs = integrate.quad(lambda w: math.exp(log_density_joint_wus([a], [w], cfg)), 0, np.inf,
                             epsabs=0, epsrel=1e-11, limit=200)[0]
        marg = max(marg, abs(lhs / math.exp(log_density_us([a], cfg).total) - 1))
    report(3, f"normalisations: |int rho - 1| {rho_err:.1e}, |int mu - 1| {mu_err:.1e}, "
              f"marginalisation {marg:.1e}",
           {"rho <= 1e-4": rho_err <= 1e-4, "mu <= 1e-4": mu_err <= 1e-4,
            "marginal <= 1e-6": marg <= 1e-6}, t0, 30)


# ---------------------------------------------------------------- 4

@pytest.mark.slow
def test_criterion_04_ward_identity(report):
    t0 = time.perf_counter()
    quad = oracles.single_edge_moment_quadrature(4.0, 1.0, _edge_density(4.0))
    edge = ward_identity_estimate(single_edge(), 4.0, WardSpec([WardTerm(0, 1, 1.0)]),
                                  McmcParams(burn_in=10_000, sweeps=200_000, thin=5), seed=41)
    box = LatticeBox(3, 1)
    x, y = box.root, box.index_of((1, 0, 0))
    params = McmcParams(burn_in=100_000, sweeps=100_000, thin=10)
    est = ward_identity_estimate(box, 8.0, WardSpec([WardTerm(x, y, 2.0)]), params, seed=42)
    z_edge = abs(edge.mean - 1) / edge.stderr
    z_box = abs(est.mean - 1) / est.stderr
    report(4, f"Ward: quadrature <B> = {quad:.7f}; edge MCMC {edge.mean:.4f} +- {edge.stderr:.4f} "
              f"(z {z_edge:.2f}); 3x3x3 a=8 m=2 {est.mean:.4f} +- {est.stderr:.4f} (z {z_box:.2f})",
           {"quadrature 4/3 to 1e-4": abs(quad - 4 / 3) <= 1e-4, "edge within 3 se": z_edge <= 3,
            "box within 3 se": z_box <= 3, ">= 1e5 retained sweeps": params.sweeps >= 100_000},
           t0, 600)


# ---------------------------------------------------------------- 5

@pytest.mark.slow
def test_criterion_05_protected_ward(report):
    t0 = time.perf_counter()
    box = LatticeBox(3, 1)
    # two opposite faces of the box, with one nearest-neighbour pair in each
    left = [int(k) for k in np.flatnonzero(box.points[:, 0] == -1)]
    right = [int(k) for k in np.flatnonzero(box.points[:, 0] == 1)]
    t1 = WardTerm(box.index_of((-1, 0, 0)), box.index_of((-1, 1, 0)), 2.0, region=left)
    t2 = WardTerm(box.index_of((1, 0, 0)), box.index_of((1, 0, 1)), 2.0, region=right)
    e1 = WardTerm(box.index_of((-1, 0, 0)), box.index_of((-1, 1, 0)), 2.0,
                  region=[box.index_of((-1, 0, 0)), box.index_of((-1, 1, 0))])
    e2 = WardTerm(box.index_of((1, 0, 0)), box.index_of((1, 0, 1)), 2.0,
                  region=[box.index_of((1, 0, 0)), box.index_of((1, 0, 1))])
    params = McmcParams(burn_in=20_000, sweeps=100_000, thin=10)
    chains = run_chains(8.0, box, params, seed=51)
    faces = protected_ward_estimate(box, 8.0, WardSpec([t1, t2], ChiParams()), params, 51, samples=chains)
    edges = protected_ward_estimate(box, 8.0, WardSpec([e1, e2], ChiParams()), params, 51, samples=chains)
    checks, parts = {}, []
    for label, res in (("faces", faces), ("edges", edges)):
        for key in ("plain", "protected"):
            e = res[key]
            checks[f"{label} {key} <= 1 + 3 se"] = e.mean <= 1 + 3 * e.stderr
            parts.append(f"{label}/{key} {e.mean:.4f} +- {e.stderr:.4f}")
    report(5, "protected Ward (a=8, m=2): " + ", ".join(parts)
           + f", chi-bar rate {faces['chi_bar_rate'].mean:.3f}", checks, t0, 600)


# ---------------------------------------------------------------- 6

@pytest.mark.slow
def test_criterion_06_moment_bound(report):
    t0 = time.perf_counter()
    quad = oracles.single_edge_moment_quadrature(2.0, 1.0, _edge_density(2.0))
    p = McmcParams(burn_in=10_000, sweeps=200_000, thin=5)
    tri = moment_bound_estimate(triangle(), 4.0, [(0, 1), (1, 2)], [1.0, 1.0], p, seed=61)
    box = LatticeBox(3, 1)
    o = box.root
    edges = [(o, box.index_of(q)) for q in [(1, 0, 0), (0, 1, 0), (0, 0, 1)]]
    bx = moment_bound_estimate(box, 8.0, edges, [2.0] * 3, McmcParams(burn_in=20_000, sweeps=100_000, thin=10),
                               seed=62)
    report(6, f"moments: equality case {quad:.7f}; triangle n=2 {tri.mean:.4f} +- {tri.stderr:.4f} (<= 4); "
              f"box n=3 {bx.mean:.4f} +- {bx.stderr:.4f} (<= 8)",
           {"equality case 2 to 1e-4": abs(quad - 2) <= 1e-4,
            "triangle <= 4 + 3 se": tri.mean <= 4 + 3 * tri.stderr,
            "box <= 8 + 3 se": bx.mean <= 8 + 3 * bx.stderr}, t0, 300)


# ---------------------------------------------------------------- 7

def test_criterion_07_mixture_equivalence(report):
    t0 = time.perf_counter()
    results = {}
    for name, g in (("triangle", triangle()), ("cube", LatticeBox(3, 1).graph.induced(
            [LatticeBox(3, 1).index_of(p) for p in np.ndindex(2, 2, 2)])[0])):
        a = np.ones(g.n_edges)
        exact = {p: errw_path_probability(g, a, p) for p in enumerate_paths(g, 0, 4)}
        for method, seed in (("errw", 71), ("mixture", 72)):
            law = path_law(sample_paths(g, a, 4, 1_000_000, seed, method=method))
            results[(name, method)] = total_variation(law, exact)
    text = ", ".join(f"{n}/{m} {v:.4f}" for (n, m), v in results.items())
    report(7, f"mixture equivalence, TV to exact 4-step law: {text}",
           {f"{n}/{m} TV <= 0.01": v <= 0.01 for (n, m), v in results.items()}, t0, 120)


# ---------------------------------------------------------------- 8

def test_criterion_08_resistance_bound(report):
    t0 = time.perf_counter()
    rows, checks = [], {}
    vals = []
    for L in (10, 20, 40):
        dia = build_diamond((0, 0, 0), (L, 0, 0), "deformed")
        cfg = FieldConfig.zeros(dia.region.graph)
        rep = resistance_bound_check(cfg, 1.0, dia, ChiParams(), K=200, seed=0)
        flow = spread_flow(dia, select_h(dia), 200, 0)
        target = np.zeros(flow.n_vertices, dtype=np.int64)
        target[flow.source], target[flow.sink] = flow.denominator, -flow.denominator
        checks[f"L={L} divergence exact"] = bool(np.array_equal(flow.divergence_exact(), target))
        checks[f"L={L} a D^N <= flow energy"] = rep.a_times_DN <= rep.flow_energy_bound * (1 + 1e-10)
        vals.append(rep.a_times_DN)
        rows.append(f"L={L}: aD^N {rep.a_times_DN:.3f} <= {rep.flow_energy_bound:.3f}")
    plateau = max(vals) / min(vals)
    checks["plateau max/min <= 1.5"] = plateau <= 1.5
    rng = np.random.default_rng(8)
    box = LatticeBox(3, 1)
    g = box.graph
    worst_cond, worst_tri = math.inf, math.inf
    for k in range(10_000):
        scale = (0.1, 0.5, 1.0, 2.0)[k % 4]
        cfg = FieldConfig.pinned(g, scale * rng.standard_normal(len(box)), scale * rng.standard_normal(len(box)))
        a = rng.uniform(0.5, 5.0, g.n_edges)
        x, y = rng.choice(len(box), 2, replace=False)
        worst_cond = min(worst_cond, conductance_bound_margin(cfg, a, int(x), int(y)))
        worst_tri = min(worst_tri, b_triangle_margin(cfg, rng.integers(0, len(box), (8, 3))))
    checks["conductance bound pointwise"] = worst_cond >= 1 - 1e-12
    checks["B triangle pointwise"] = worst_tri >= 1 - 1e-12
    report(8, "resistance bound: " + "; ".join(rows) + f"; plateau {plateau:.3f}; "
              f"min margins conductance bound {worst_cond:.3f}, triangle {worst_tri:.3f} on 1e4 fields",
           checks, t0, 300)


# ---------------------------------------------------------------- 9

def _synthetic_fields(g, rng, count):
    n = g.n_vertices
    for k in range(count):
        kind = k % 5
        if kind < 4:
            sc = (0.05, 0.2, 0.5, 1.0)[kind]
            yield FieldConfig.pinned(g, sc * rng.standard_normal(n), sc * rng.standard_normal(n))
        else:
            u = np.zeros(n)
            spikes = rng.choice(n, max(1, n // 8), replace=False)
            u[spikes] = rng.uniform(5, 30, len(spikes))
            yield FieldConfig.pinned(g, u, np.zeros(n))


@pytest.mark.slow
def test_criterion_09_good_points(report):
    t0 = time.perf_counter()
    chi = ChiParams(2.0, 0.125)
    box = LatticeBox(3, 2)
    rng = np.random.default_rng(9)
    chain = sample_field_mcmc(8.0, box.graph, McmcParams(burn_in=1000, sweeps=5000, thin=10), seed=91)
    fields = list(chain.configs()) + list(_synthetic_fields(box.graph, rng, 500))
    n1 = [good_point_check(box, f, chi, (0, 0, 0), 1, 2.0, enumerate_trees=True) for f in fields]
    region = cube_region((-8, -8, -8), 16)
    fields2 = list(_synthetic_fields(region.graph, rng, 40))
    n2 = [good_point_check(region, f, chi, (0, 0, 0), 2, 2.0, enumerate_trees=True) for f in fields2]
    bad1 = sum(not r.holds for r in n1)
    bad2 = sum(not r.holds for r in n2)
    report(9, f"good points: n=1 holds on {len(n1) - bad1}/{len(n1)} fields "
              f"({sum(r.left for r in n1):.0f} without a good point); n=2 ({n2[0].n_trees} trees) "
              f"holds on {len(n2) - bad2}/{len(n2)} ({sum(r.left for r in n2):.0f} without a good point)",
           {"n=1 on 1e3 fields": bad1 == 0 and len(n1) >= 1000,
            "n=2 with enumeration": bad2 == 0 and n2[0].n_trees == 257,
            "both sides exercised": any(r.left for r in n1) and any(r.left for r in n2)},
           t0, 600)


# ---------------------------------------------------------------- 10

def _pin_ok(value, stderr, pin):
    return abs(value - pin["value"]) <= 4 * math.hypot(stderr, pin["stderr"]) + 1e-12


@pytest.mark.slow
def test_criterion_10_fluctuations_and_escape(report):
    t0 = time.perf_counter()
    box = LatticeBox(3, 2)
    g = box.graph
    o = box.root
    pairs = [(o, v) for v in range(len(box)) if v != o]
    pairs.append((box.index_of((-2, -2, -2)), box.index_of((2, 2, 2))))
    flucts = fluctuation_estimate(box, 100.0, 3.0, pairs, McmcParams(burn_in=2000, sweeps=20_000, thin=10),
                                  seed=101)
    worst = max(flucts, key=lambda e: e.mean)
    corner = flucts[-1]
    hi = escape_probability_experiment(3, 3, 100.0, 100_000, seed=102)
    lo = escape_probability_experiment(3, 3, 0.1, 100_000, seed=103)
    sep = (hi.estimate - lo.estimate) / math.hypot(hi.stderr, lo.stderr)
    pipe = transience_pipeline_check(3, 2, 100.0, McmcParams(burn_in=1000, sweeps=10_000, thin=10), seed=104)
    walk2 = escape_probability_experiment(3, 2, 100.0, 100_000, seed=105)
    env = pipe.escape_from_environment
    dual = abs(env.mean - walk2.estimate) / math.hypot(env.stderr, walk2.stderr)
    checks = {
        "all cosh^3 < 2": all(e.mean < 2 for e in flucts),
        "escape separation >= 5 sigma": sep >= 5,
        "escape routes agree within 3 sigma": dual <= 3,
        "Jensen direction": pipe.jensen_ok and pipe.batches_jensen_ok,
        "pin: max cosh^3": _pin_ok(worst.mean, worst.stderr, PINS["max_cosh3_V2_a100"]),
        "pin: corner cosh^3": _pin_ok(corner.mean, corner.stderr, PINS["corner_cosh3_V2_a100"]),
        "pin: escape a=100": _pin_ok(hi.estimate, hi.stderr, PINS["escape_d3_n3_a100"]),
        "pin: escape a=0.1": _pin_ok(lo.estimate, lo.stderr, PINS["escape_d3_n3_a0.1"]),
        "pin: pipeline ratio": _pin_ok(pipe.ratio, pipe.ratio_stderr, PINS["pipeline_ratio_d3_n2_a100"]),
    }
    report(10, f"evidence: max <cosh^3> {worst.mean:.4f} +- {worst.stderr:.4f}, corner {corner.mean:.4f}; "
               f"escape a=100 {hi.estimate:.4f} vs a=0.1 {lo.estimate:.4f} ({sep:.0f} sigma, "
               f"{lo.censored} censored); n=2 escape walk {walk2.estimate:.4f} vs environment "
               f"{env.mean:.4f} (z {dual:.2f}); pipeline ratio {pipe.ratio:.3f}",
           checks, t0, 1800)
