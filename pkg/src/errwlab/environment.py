"""Environment fields (u, s), the B quantity and the mixing densities.

Every density is returned in log form. Minors are taken through a Cholesky
factorisation of the root-reduced matrix, which is positive definite whenever
the graph is connected and all conductances are positive.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import gammaln

from .graph import Graph

LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True, eq=False)
class FieldConfig:
    """Pinned fields ``u`` and ``s`` on the vertices of ``graph``."""

    graph: Graph
    u: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        n = self.graph.n_vertices
        u = np.array(self.u, dtype=float).reshape(n)
        s = np.array(self.s, dtype=float).reshape(n)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(s))):
            raise ValueError("field values must be finite")
        r = self.graph.root
        if u[r] != 0 or s[r] != 0:
            raise ValueError("fields must vanish at the root")
        u.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "s", s)

    @property
    def root(self) -> int:
        return self.graph.root

    @classmethod
    def zeros(cls, graph: Graph) -> "FieldConfig":
        return cls(graph, np.zeros(graph.n_vertices), np.zeros(graph.n_vertices))

    @classmethod
    def pinned(cls, graph: Graph, u, s) -> "FieldConfig":
        """Shift ``u`` and ``s`` so that both vanish at the root."""
        u = np.asarray(u, float)
        s = np.asarray(s, float)
        return cls(graph, u - u[graph.root], s - s[graph.root])


@dataclass(frozen=True, eq=False)
class EdgeWeights:
    """Strictly positive per-edge weights (Gamma shapes / initial ERRW weights)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ValueError("edge weights must be finite and strictly positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def uniform(cls, graph: Graph, a: float) -> "EdgeWeights":
        return cls(np.full(graph.n_edges, float(a)))

    @property
    def a_min(self) -> float:
        return float(self.values.min()) if self.values.size else math.inf

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class LogDensityReport:
    """Additive pieces of a log density.

    ``log_prefactor`` holds the ``2 pi`` constant and ``-sum_j u_j``;
    ``log_B_product`` holds ``-sum_e a_e log B_e`` (joint measure) or
    ``-H(w, u)`` (fixed-conductance measure).
    """

    log_prefactor: float
    log_B_product: float
    log_minor: float

    @property
    def total(self) -> float:
        return self.log_prefactor + self.log_B_product + self.log_minor


def b_quantity(cfg: FieldConfig, x: int, y: int) -> float:
    u, s = cfg.u, cfg.s
    return b_from_values(u[x], u[y], s[x], s[y])


def b_from_values(ux, uy, sx, sy):
    """``cosh(ux - uy) + exp(ux + uy) (sx - sy)^2 / 2``, broadcasting."""
    return np.cosh(ux - uy) + 0.5 * np.exp(ux + uy) * (sx - sy) ** 2


def edge_b(cfg: FieldConfig, edges=None) -> np.ndarray:
    e = cfg.graph.edges if edges is None else np.asarray(edges)
    i, j = e[:, 0], e[:, 1]
    return b_from_values(cfg.u[i], cfg.u[j], cfg.s[i], cfg.s[j])


def _check_positive(w, n_edges):
    w = np.asarray(w, dtype=float).reshape(-1)
    if len(w) != n_edges:
        raise ValueError(f"expected {n_edges} edge values, got {len(w)}")
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("conductances must be strictly positive")
    return w


def h_energy(w, cfg: FieldConfig) -> float:
    """``sum_{ij} w_ij (cosh(u_i - u_j) - 1)`` over the edges of the graph."""
    g = cfg.graph
    w = _check_positive(w, g.n_edges)
    du = cfg.u[g.edges[:, 0]] - cfg.u[g.edges[:, 1]]
    return float(np.sum(w * (np.cosh(du) - 1.0)))


def laplacian(n: int, edges, conductances) -> np.ndarray:
    """Weighted graph Laplacian (zero row sums, ``-c_ij`` off the diagonal)."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    c = np.asarray(conductances, dtype=float)
    M = np.zeros((n, n))
    i, j = edges[:, 0], edges[:, 1]
    np.add.at(M, (i, j), -c)
    np.add.at(M, (j, i), -c)
    np.add.at(M, (i, i), c)
    np.add.at(M, (j, j), c)
    return M


def log_diagonal_minor(matrix, removed: int = 0) -> float:
    """Log of the determinant of ``matrix`` with row and column ``removed`` deleted.

    The matrix must be Laplacian-type: zero row and column sums and
    non-positive off-diagonal entries. By the matrix-tree theorem every such
    minor equals the weighted spanning-tree sum, so ``removed`` is immaterial.
    """
    M = np.asarray(matrix, dtype=float)
    n = M.shape[0]
    if M.shape != (n, n):
        raise ValueError("matrix must be square")
    if not 0 <= removed < max(n, 1):
        raise ValueError("removed index out of range")
    scale = max(np.abs(M).max(initial=0.0), 1e-300)
    if np.abs(M.sum(axis=1)).max(initial=0.0) > 1e-9 * scale or \
            np.abs(M.sum(axis=0)).max(initial=0.0) > 1e-9 * scale:
        raise ValueError("rows and columns of a Laplacian-type matrix must sum to zero")
    off = M - np.diag(np.diag(M))
    if np.any(off > 1e-12 * scale):
        raise ValueError("off-diagonal entries must be non-positive")
    if n <= 1:
        return 0.0
    keep = np.r_[0:removed, removed + 1:n]
    N = M[np.ix_(keep, keep)]
    try:
        L = linalg.cholesky(N, lower=True)
    except linalg.LinAlgError:
        raise ValueError("reduced matrix is not positive definite (disconnected graph?)") from None
    diag = np.diag(L)
    if np.any(diag <= 0):
        raise ValueError("non-positive pivot in the reduced matrix")
    return float(2.0 * np.sum(np.log(diag)))


def diagonal_minor(matrix, removed: int = 0) -> float:
    return math.exp(log_diagonal_minor(matrix, removed))


def m_conductances(w, cfg: FieldConfig) -> np.ndarray:
    """Conductances ``w_ij exp(u_i + u_j)`` of the fixed-environment chain."""
    e = cfg.graph.edges
    return np.asarray(w, float) * np.exp(cfg.u[e[:, 0]] + cfg.u[e[:, 1]])


def mu_conductances(a, cfg: FieldConfig) -> np.ndarray:
    """Conductances ``a_ij exp(u_i + u_j) / B_ij`` of the matrix M(u, s)."""
    a = a.values if isinstance(a, EdgeWeights) else np.asarray(a, float)
    e = cfg.graph.edges
    return a * np.exp(cfg.u[e[:, 0]] + cfg.u[e[:, 1]]) / edge_b(cfg)


def log_density_u(w, cfg: FieldConfig) -> LogDensityReport:
    """Log density of U under VRJP with fixed conductances ``w``."""
    g = cfg.graph
    w = _check_positive(w, g.n_edges)
    n = g.n_vertices
    pre = -0.5 * (n - 1) * LOG_2PI - float(np.sum(cfg.u))
    minor = log_diagonal_minor(laplacian(n, g.edges, m_conductances(w, cfg)), g.root)
    return LogDensityReport(pre, -h_energy(w, cfg), 0.5 * minor)


def log_density_us(a, cfg: FieldConfig) -> LogDensityReport:
    """Log of the joint density of (U, S) after integrating the Gamma conductances."""
    g = cfg.graph
    av = a.values if isinstance(a, EdgeWeights) else _check_positive(a, g.n_edges)
    n = g.n_vertices
    pre = -(n - 1) * LOG_2PI - float(np.sum(cfg.u))
    logb = -float(np.sum(av * np.log(edge_b(cfg))))
    minor = log_diagonal_minor(laplacian(n, g.edges, mu_conductances(av, cfg)), g.root)
    return LogDensityReport(pre, logb, minor)


def log_density_joint_wus(a, w, cfg: FieldConfig) -> float:
    """Log density of (W, U, S), including the Gamma(a_e, 1) factors."""
    g = cfg.graph
    av = a.values if isinstance(a, EdgeWeights) else _check_positive(a, g.n_edges)
    w = _check_positive(w, g.n_edges)
    n = g.n_vertices
    out = -(n - 1) * LOG_2PI - float(np.sum(cfg.u))
    out -= float(np.sum(w * (edge_b(cfg) - 1.0)))
    out += log_diagonal_minor(laplacian(n, g.edges, m_conductances(w, cfg)), g.root)
    out += float(np.sum(-w + (av - 1.0) * np.log(w) - gammaln(av)))
    return out
