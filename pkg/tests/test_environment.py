import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from errwlab.environment import (EdgeWeights, FieldConfig, b_from_values, b_quantity, diagonal_minor,
                                 edge_b, laplacian, log_density_joint_wus, log_density_u,
                                 log_density_us, log_diagonal_minor)
from errwlab.graph import Graph, path_graph, random_connected_graph, single_edge, triangle

import oracles


def random_field(g, rng, scale=1.0):
    return FieldConfig.pinned(g, scale * rng.standard_normal(g.n_vertices),
                              scale * rng.standard_normal(g.n_vertices))


def test_field_must_vanish_at_root():
    with pytest.raises(ValueError):
        FieldConfig(single_edge(), [1.0, 0.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        FieldConfig(single_edge(), [0.0, np.nan], [0.0, 0.0])


def test_weights_positive():
    with pytest.raises(ValueError):
        EdgeWeights([1.0, 0.0])
    assert EdgeWeights.uniform(triangle(), 2.0).a_min == 2.0


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_b_at_least_one_and_symmetric(ux, uy, sx, sy):
    b = b_from_values(ux, uy, sx, sy)
    assert b >= 1 - 1e-12
    assert b == pytest.approx(b_from_values(uy, ux, sy, sx), rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6))
def test_b_triangle_inequality(v):
    ux, uy, uz, sx, sy, sz = v
    bxz = b_from_values(ux, uz, sx, sz)
    assert bxz <= 2 * b_from_values(ux, uy, sx, sy) * b_from_values(uy, uz, sy, sz) * (1 + 1e-12)


def test_zero_field_gives_unit_b():
    cfg = FieldConfig.zeros(triangle())
    assert np.all(edge_b(cfg) == 1.0)
    assert b_quantity(cfg, 1, 2) == 1.0


def test_minor_matches_spanning_trees(rng):
    for _ in range(30):
        n = int(rng.integers(2, 7))
        g = random_connected_graph(n, rng)
        c = rng.uniform(0.1, 3.0, g.n_edges)
        ref = oracles.spanning_tree_sum(n, g.edges, c)
        L = laplacian(n, g.edges, c)
        vals = [diagonal_minor(L, k) for k in range(n)]
        assert max(abs(v / ref - 1) for v in vals) <= 1e-9


def test_minor_rejects_bad_input():
    with pytest.raises(ValueError):
        log_diagonal_minor(np.eye(3))
    L = laplacian(4, [(0, 1), (2, 3)], [1.0, 1.0])
    with pytest.raises(ValueError):
        log_diagonal_minor(L)
    assert log_diagonal_minor(np.zeros((1, 1))) == 0.0


def test_single_vertex_is_trivial():
    g = Graph(1, np.zeros((0, 2)))
    cfg = FieldConfig.zeros(g)
    assert log_density_us(np.ones(0), cfg).total == 0.0
    assert log_density_u(np.zeros(0), cfg).total == 0.0


def test_single_edge_closed_forms(rng):
    g = single_edge()
    for _ in range(10):
        u, s = rng.normal(size=2)
        cfg = FieldConfig(g, [0.0, u], [0.0, s])
        a = 2.5
        ref = math.log(oracles.mu_single_edge(u, s, a))
        assert log_density_us([a], cfg).total == pytest.approx(ref, abs=1e-12)
        w = 1.7
        assert log_density_u([w], cfg).total == pytest.approx(
            math.log(oracles.rho_single_edge(u, w)), abs=1e-12)


def test_joint_reduces_at_zero_field():
    g = path_graph(3)
    cfg = FieldConfig.zeros(g)
    a = np.array([2.0, 3.0])
    w = np.array([0.5, 1.5])
    from scipy.stats import gamma
    ref = -2 * math.log(2 * math.pi) + math.log(w.prod()) + gamma.logpdf(w, a).sum()
    assert log_density_joint_wus(a, w, cfg) == pytest.approx(ref, abs=1e-12)


def test_density_invariant_under_root_preserving_symmetry(rng):
    # 4-cycle rooted at 0: reflection 1 <-> 3 fixes the root
    g = Graph(4, [(0, 1), (1, 2), (2, 3), (0, 3)])
    a = np.full(4, 1.5)
    cfg = random_field(g, rng)
    perm = np.array([0, 3, 2, 1])
    mirrored = FieldConfig(g, cfg.u[perm], cfg.s[perm])
    assert log_density_us(a, cfg).total == pytest.approx(log_density_us(a, mirrored).total, abs=1e-12)


def test_marginalisation_on_two_edges():
    from scipy import integrate
    g = path_graph(3)
    cfg = FieldConfig(g, [0.0, 0.3, -0.4], [0.0, 0.5, 0.2])
    a = [2.0, 3.0]
    f = lambda w2, w1: math.exp(log_density_joint_wus(a, [w1, w2], cfg))
    total = integrate.dblquad(f, 0, np.inf, 0, np.inf, epsabs=0, epsrel=1e-10)[0]
    assert total == pytest.approx(math.exp(log_density_us(a, cfg).total), rel=1e-8)
