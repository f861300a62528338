"""Independent reference computations used by the tests.

Nothing here calls the package's solvers: spanning trees are enumerated,
resistances come from dense pseudo-inverses, and single-edge expectations come
from direct quadrature of closed-form densities.
"""
from __future__ import annotations

import itertools
import math
import warnings

import numpy as np
from scipy import integrate


def spanning_tree_sum(n: int, edges, weights) -> float:
    """Weighted spanning-tree count by enumerating all (n-1)-edge subsets."""
    edges = [tuple(map(int, e)) for e in edges]
    total = 0.0
    for subset in itertools.combinations(range(len(edges)), n - 1):
        parent = list(range(n))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        ok = True
        for k in subset:
            i, j = edges[k]
            ri, rj = find(i), find(j)
            if ri == rj:
                ok = False
                break
            parent[ri] = rj
        if ok:
            total += math.prod(weights[k] for k in subset)
    return total


def pinv_resistance(n: int, edges, c, x: int, y: int) -> float:
    """Effective resistance from the Moore-Penrose inverse of the Laplacian."""
    L = np.zeros((n, n))
    for (i, j), w in zip(edges, c):
        L[i, i] += w
        L[j, j] += w
        L[i, j] -= w
        L[j, i] -= w
    P = np.linalg.pinv(L)
    e = np.zeros(n)
    e[x], e[y] = 1.0, -1.0
    return float(e @ P @ e)


def absorbing_escape(n: int, edges, c, x: int, targets) -> float:
    """P_x(hit targets before returning to x) by iterating the transition matrix."""
    P = np.zeros((n, n))
    for (i, j), w in zip(edges, c):
        P[i, j] += w
        P[j, i] += w
    P /= P.sum(axis=1, keepdims=True)
    # h(i) = P_i(hit targets before x), h = 1 on targets, 0 at x
    free = [i for i in range(n) if i != x and i not in set(targets)]
    A = np.eye(len(free)) - P[np.ix_(free, free)]
    b = P[np.ix_(free, list(targets))].sum(axis=1)
    h = np.zeros(n)
    h[list(targets)] = 1.0
    if free:
        h[free] = np.linalg.solve(A, b)
    return float(P[x] @ h)


# ---------------------------------------------------------------- single-edge densities

def rho_single_edge(u, w: float):
    """Closed-form fixed-conductance density of ``U_1`` on one edge."""
    return (2 * math.pi) ** -0.5 * np.exp(-u - w * (np.cosh(u) - 1.0)) * np.sqrt(w * np.exp(u))


def mu_single_edge(u, s, a: float):
    """Closed form ``a / (2 pi) B^{-a-1}`` of the (U, S) density on one edge."""
    B = np.cosh(u) + 0.5 * np.exp(u) * s * s
    return a / (2 * math.pi) * B ** (-a - 1)


def single_edge_moment_quadrature(a: float, m: float, density=None, rtol: float = 1e-8) -> float:
    """``<B^m>`` on one edge by 2-d quadrature over ``(u, s)``.

    The ``s`` integral is done on ``t = s e^{u/2}`` so that it no longer
    depends on the scale of ``u``.
    """
    dens = density or (lambda u, s: mu_single_edge(u, s, a))

    def inner(u):
        scale = math.exp(-u / 2)

        def f(t):
            s = t * scale
            B = math.cosh(u) + 0.5 * t * t
            return B ** m * dens(u, s) * scale

        return integrate.quad(f, -np.inf, np.inf, epsabs=1e-12, epsrel=rtol, limit=200)[0]

    # the far tails of the inner integral are below the absolute tolerance and
    # trigger spurious slow-convergence warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        return integrate.quad(inner, -40, 40, epsabs=1e-12, epsrel=rtol, limit=400, points=[0.0])[0]


def rho_cdf(w: float):
    """CDF of the fixed-conductance ``U_1`` law on one edge."""
    def F(v):
        v = np.atleast_1d(v)
        return np.array([integrate.quad(rho_single_edge, -30, float(x), args=(w,), limit=200)[0]
                         for x in v])
    return F
