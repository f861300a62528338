"""Electrical networks: Green's function, effective resistance, hitting
probabilities, current flows and the x,y-rescaled conductances."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg

from .environment import EdgeWeights, FieldConfig, b_from_values, laplacian
from .graph import Graph


class ConductanceNetwork:
    """Connected graph with strictly positive symmetric conductances.

    ``labels[k]`` is the caller's name for local vertex ``k`` (identity unless
    the network was cut out of a larger graph).
    """

    def __init__(self, graph: Graph, conductance, labels=None):
        c = np.array(conductance, dtype=float).reshape(-1)
        if len(c) != graph.n_edges:
            raise ValueError("one conductance per edge is required")
        if np.any(~np.isfinite(c)) or np.any(c <= 0):
            raise ValueError("conductances must be strictly positive and finite")
        if not graph.is_connected():
            raise ValueError("network is not connected")
        self.graph = graph
        self.conductance = c
        self.conductance.setflags(write=False)
        if labels is None:
            labels = np.arange(graph.n_vertices)
        self.labels = np.asarray(labels, dtype=np.int64)
        self._local = {int(v): k for k, v in enumerate(self.labels)}

    @classmethod
    def from_edges(cls, n, edges, conductance, root=0):
        g = Graph(n, edges, root)
        # Graph sorts its edges; carry the conductances along.
        e = np.sort(np.asarray(edges, dtype=np.int64).reshape(-1, 2), axis=1)
        lookup = {(int(i), int(j)): float(c) for (i, j), c in zip(e, np.asarray(conductance, float))}
        return cls(g, [lookup[(int(i), int(j))] for i, j in g.edges])

    @property
    def n(self) -> int:
        return self.graph.n_vertices

    @property
    def edges(self) -> np.ndarray:
        return self.graph.edges

    @property
    def root(self) -> int:
        return self.graph.root

    def local(self, v) -> int:
        try:
            return self._local[int(v)]
        except KeyError:
            raise KeyError(f"vertex {v} is not in the network") from None

    @cached_property
    def vertex_conductance(self) -> np.ndarray:
        """``c_i = sum_{j ~ i} c_ij``."""
        out = np.zeros(self.n)
        np.add.at(out, self.edges[:, 0], self.conductance)
        np.add.at(out, self.edges[:, 1], self.conductance)
        return out

    def laplacian(self) -> np.ndarray:
        return laplacian(self.n, self.edges, self.conductance)

    def scaled(self, factor: float) -> "ConductanceNetwork":
        return ConductanceNetwork(self.graph, self.conductance * factor, self.labels)

    def with_root(self, root: int) -> "ConductanceNetwork":
        return ConductanceNetwork(self.graph.with_root(root), self.conductance, self.labels)

    def restrict(self, vertices) -> "ConductanceNetwork":
        """Sub-network on the edges with both endpoints in ``vertices`` (labels)."""
        loc = [self.local(v) for v in vertices]
        sub, keep = self.graph.induced(loc)
        eids = [self.graph.edge_id(keep[i], keep[j]) for i, j in sub.edges]
        return ConductanceNetwork(sub, self.conductance[eids], self.labels[keep])


def _reduced_solve(N: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Cholesky solve with iterative refinement while the residual is large."""
    factor = linalg.cho_factor(N, lower=True)
    x = linalg.cho_solve(factor, rhs)
    scale = max(np.abs(rhs).max(initial=0.0), 1.0)
    for _ in range(3):
        r = rhs - N @ x
        if np.abs(r).max(initial=0.0) <= 1e-10 * scale:
            break
        x = x + linalg.cho_solve(factor, r)
    return x


def _reduced(net: ConductanceNetwork, root: int):
    keep = np.r_[0:root, root + 1:net.n]
    return keep, net.laplacian()[np.ix_(keep, keep)]


def greens_matrix(net: ConductanceNetwork, root: int | None = None) -> np.ndarray:
    """``G`` with zero root row/column and the inverse reduced Laplacian elsewhere."""
    root = net.root if root is None else root
    keep, N = _reduced(net, root)
    G = np.zeros((net.n, net.n))
    if len(keep):
        try:
            Ginv = _reduced_solve(N, np.eye(len(keep)))
        except linalg.LinAlgError:
            raise ValueError("reduced Laplacian is singular") from None
        Ginv = 0.5 * (Ginv + Ginv.T)
        G[np.ix_(keep, keep)] = Ginv
    return G


def potentials(net: ConductanceNetwork, x: int, y: int, root: int | None = None) -> np.ndarray:
    """Local-index potentials ``G (delta_x - delta_y)``."""
    root = net.root if root is None else root
    keep, N = _reduced(net, root)
    b = np.zeros(net.n)
    b[x] += 1.0
    b[y] -= 1.0
    phi = np.zeros(net.n)
    if len(keep):
        phi[keep] = _reduced_solve(N, b[keep])
    return phi


def effective_resistance(net: ConductanceNetwork, x, y, root: int | None = None) -> float:
    """``G(x,x) - 2 G(x,y) + G(y,y)`` between labelled vertices ``x`` and ``y``."""
    i, j = net.local(x), net.local(y)
    if i == j:
        warnings.warn("effective resistance requested between a vertex and itself",
                      RuntimeWarning, stacklevel=2)
        return 0.0
    phi = potentials(net, i, j, root)
    return float(phi[i] - phi[j])


def glue(net: ConductanceNetwork, targets) -> tuple[ConductanceNetwork, int]:
    """Short-circuit ``targets`` into one vertex; parallel edges are merged.

    Returns the new network and the local index of the glued vertex.
    """
    tloc = {net.local(t) for t in targets}
    others = [k for k in range(net.n) if k not in tloc]
    new = {k: i for i, k in enumerate(others)}
    g_idx = len(others)
    for k in tloc:
        new[k] = g_idx
    merged: dict = {}
    for (i, j), c in zip(net.edges, net.conductance):
        a, b = new[int(i)], new[int(j)]
        if a == b:
            continue
        key = (min(a, b), max(a, b))
        merged[key] = merged.get(key, 0.0) + c
    keys = sorted(merged)
    g = Graph(g_idx + 1, np.array(keys, dtype=np.int64).reshape(-1, 2), 0)
    labels = list(net.labels[others]) + [-1]
    return ConductanceNetwork(g, [merged[k] for k in keys], labels), g_idx


def effective_resistance_to_set(net: ConductanceNetwork, x, targets) -> float:
    glued, _ = glue(net, targets)
    return effective_resistance(glued, x, -1)


def hitting_probability(net: ConductanceNetwork, x, targets) -> float:
    """``P_x(hit targets before returning to x)`` for the chain ``p_ij = c_ij / c_i``.

    Solved through the harmonic function equal to 1 on ``targets`` and 0 at ``x``.
    """
    xi = net.local(x)
    tset = {net.local(t) for t in targets}
    if not tset:
        raise ValueError("targets must be nonempty")
    if xi in tset:
        raise ValueError("x must not be a target")
    reach = net.graph.component_of(xi)
    if not reach & tset:
        raise ValueError("targets are unreachable from x")
    interior = np.array([k for k in range(net.n) if k != xi and k not in tset], dtype=np.int64)
    h = np.zeros(net.n)
    h[list(tset)] = 1.0
    if len(interior):
        L = net.laplacian()
        A = L[np.ix_(interior, interior)]
        boundary = np.array(sorted(tset) + [xi])
        rhs = -L[np.ix_(interior, boundary)] @ h[boundary]
        # vertices cut off from both x and the targets carry no mass
        live = np.array([k in reach for k in interior])
        sol = np.zeros(len(interior))
        if live.any():
            sol[live] = _reduced_solve(A[np.ix_(live, live)], rhs[live])
        h[interior] = sol
    nb = net.graph.neighbours(xi)
    c = np.array([net.conductance[net.graph.edge_id(xi, j)] for j in nb])
    return float(c @ h[nb] / c.sum())


# ---------------------------------------------------------------- flows

@dataclass(frozen=True, eq=False)
class UnitFlow:
    """Antisymmetric edge function; ``values[k]`` is the flow along
    ``edges[k, 0] -> edges[k, 1]``.

    When ``numerators``/``denominator`` are set the flow is the exact rational
    ``numerators / denominator``.
    """

    n_vertices: int
    edges: np.ndarray
    values: np.ndarray
    source: int
    sink: int
    numerators: np.ndarray | None = None
    denominator: int | None = None

    def value(self, i: int, j: int) -> float:
        for k, (a, b) in enumerate(self.edges):
            if a == i and b == j:
                return float(self.values[k])
            if a == j and b == i:
                return -float(self.values[k])
        return 0.0

    def divergence(self) -> np.ndarray:
        div = np.zeros(self.n_vertices)
        np.add.at(div, self.edges[:, 0], self.values)
        np.subtract.at(div, self.edges[:, 1], self.values)
        return div

    def divergence_exact(self) -> np.ndarray:
        """Integer divergence of the numerators (requires the rational form)."""
        if self.numerators is None:
            raise ValueError("flow has no exact rational representation")
        div = np.zeros(self.n_vertices, dtype=np.int64)
        np.add.at(div, self.edges[:, 0], self.numerators)
        np.subtract.at(div, self.edges[:, 1], self.numerators)
        return div

    def target_divergence(self) -> np.ndarray:
        t = np.zeros(self.n_vertices)
        t[self.source] += 1.0
        t[self.sink] -= 1.0
        return t


def min_energy_flow(net: ConductanceNetwork, x, y) -> UnitFlow:
    """The unit current flow from ``x`` to ``y`` (local indices in the result)."""
    i, j = net.local(x), net.local(y)
    if i == j:
        raise ValueError("source and sink must differ")
    phi = potentials(net, i, j)
    e = net.edges
    theta = net.conductance * (phi[e[:, 0]] - phi[e[:, 1]])
    return UnitFlow(net.n, e.copy(), theta, i, j)


def flow_energy(net: ConductanceNetwork, flow: UnitFlow) -> float:
    """``sum_e theta(e)^2 / c_e`` over undirected edges."""
    if flow.n_vertices != net.n:
        raise ValueError("flow and network have different vertex sets")
    total = 0.0
    for (i, j), v in zip(flow.edges, flow.values):
        if v == 0:
            continue
        try:
            k = net.graph.edge_id(i, j)
        except KeyError:
            raise ValueError(f"flow uses edge ({i}, {j}) absent from the network") from None
        total += v * v / net.conductance[k]
    return float(total)


def path_flow(n_vertices: int, path) -> UnitFlow:
    """Unit flow carried along a lattice path given as local vertex indices."""
    net: dict = {}
    for a, b in zip(path[:-1], path[1:]):
        a, b = int(a), int(b)
        key = (min(a, b), max(a, b))
        net[key] = net.get(key, 0) + (1 if a < b else -1)
    keys = sorted(k for k, v in net.items() if v)
    nums = np.array([net[k] for k in keys], dtype=np.int64)
    edges = np.array(keys, dtype=np.int64).reshape(-1, 2)
    return UnitFlow(n_vertices, edges, nums.astype(float), int(path[0]), int(path[-1]), nums, 1)


# ---------------------------------------------------------------- environment networks

def xy_conductances(cfg: FieldConfig, a, x: int, y: int, region=None) -> ConductanceNetwork:
    """Network with ``c^{xy}_ij = a_ij exp(u_i + u_j - u_x - u_y) B_xy / B_ij``.

    ``region`` (vertex indices of ``cfg.graph``) restricts to its internal
    edges; the result keeps the original indices as labels.
    """
    g = cfg.graph
    av = a.values if isinstance(a, EdgeWeights) else np.asarray(a, float)
    u, s = cfg.u, cfg.s
    e = g.edges
    bxy = b_from_values(u[x], u[y], s[x], s[y])
    bij = b_from_values(u[e[:, 0]], u[e[:, 1]], s[e[:, 0]], s[e[:, 1]])
    c = av * np.exp(u[e[:, 0]] + u[e[:, 1]] - u[x] - u[y]) * bxy / bij
    if region is None:
        return ConductanceNetwork(g, c)
    region = sorted({int(v) for v in region})
    if x not in region or y not in region:
        raise ValueError("region must contain x and y")
    sub, keep = g.induced(region)
    if not sub.is_connected():
        raise ValueError("region is not connected")
    eids = [g.edge_id(keep[i], keep[j]) for i, j in sub.edges]
    return ConductanceNetwork(sub, c[eids], keep)


def neumann_resistance(net: ConductanceNetwork, region, x, y) -> float:
    """Resistance between ``x`` and ``y`` using only edges inside ``region``."""
    sub = net.restrict(region)
    return effective_resistance(sub, x, y)


@dataclass(frozen=True)
class ChiParams:
    """Thresholds for the indicators ``B_ij <= b |i - j|^alpha``."""

    b: float = 2.0
    alpha: float = 0.125

    def __post_init__(self):
        if not self.b > 1:
            raise ValueError("b must exceed 1")
        if not 0 <= self.alpha <= 0.125:
            raise ValueError("alpha must lie in [0, 1/8]")

    @property
    def beta(self) -> float:
        return 4 * self.alpha

    @property
    def c(self) -> float:
        return self.b ** -4 / 64

    def threshold(self, dist):
        return self.b * np.asarray(dist, float) ** self.alpha


# ---------------------------------------------------------------- CSV

def write_network_csv(path, net: ConductanceNetwork) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "conductance"])
        for (i, j), c in zip(net.edges, net.conductance):
            w.writerow([int(net.labels[i]), int(net.labels[j]), repr(float(c))])


def read_network_csv(path, root=None) -> ConductanceNetwork:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ends = sorted({int(r["i"]) for r in rows} | {int(r["j"]) for r in rows})
    loc = {v: k for k, v in enumerate(ends)}
    edges = [(loc[int(r["i"])], loc[int(r["j"])]) for r in rows]
    cond = [float(r["conductance"]) for r in rows]
    root_local = 0 if root is None else loc[int(root)]
    base = ConductanceNetwork.from_edges(len(ends), edges, cond, root_local)
    return ConductanceNetwork(base.graph, base.conductance, ends)


def write_flow_csv(path, flow: UnitFlow, labels=None) -> None:
    """Directed edge list ``tail, head, flow`` with non-negative flow values."""
    labels = np.arange(flow.n_vertices) if labels is None else np.asarray(labels)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tail", "head", "flow"])
        for (i, j), v in zip(flow.edges, flow.values):
            if v == 0:
                continue
            tail, head = (i, j) if v > 0 else (j, i)
            w.writerow([int(labels[tail]), int(labels[head]), repr(abs(float(v)))])


def read_flow_csv(path) -> list[tuple[int, int, float]]:
    with open(path, newline="") as fh:
        return [(int(r["tail"]), int(r["head"]), float(r["flow"])) for r in csv.DictReader(fh)]
