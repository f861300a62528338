"""Finite undirected graphs with integer vertex labels.

Edges are stored once, as ``(i, j)`` with ``i < j``, sorted lexicographically.
A CSR-style incidence table (``indptr``, ``nbr``, ``eid``) is kept alongside so
that the compiled kernels can walk neighbourhoods without Python objects.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


@dataclass(frozen=True, eq=False)
class Graph:
    """Simple undirected graph on vertices ``0 .. n_vertices - 1``."""

    n_vertices: int
    edges: np.ndarray
    root: int = 0

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= self.n_vertices):
            raise ValueError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("self-loops are not allowed")
        edges = np.sort(edges, axis=1)
        order = np.lexsort((edges[:, 1], edges[:, 0]))
        edges = edges[order]
        if len(edges) > 1 and np.any(np.all(edges[1:] == edges[:-1], axis=1)):
            raise ValueError("duplicate edges are not allowed")
        if not 0 <= self.root < max(self.n_vertices, 1):
            raise ValueError("root out of range")
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def _csr(self):
        n = self.n_vertices
        src = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        dst = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        eid = np.concatenate([np.arange(self.n_edges)] * 2)
        order = np.lexsort((dst, src))
        src, dst, eid = src[order], dst[order], eid[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        indptr = np.cumsum(indptr)
        return indptr, dst.astype(np.int64), eid.astype(np.int64)

    @property
    def indptr(self) -> np.ndarray:
        return self._csr[0]

    @property
    def nbr(self) -> np.ndarray:
        return self._csr[1]

    @property
    def eid(self) -> np.ndarray:
        return self._csr[2]

    def neighbours(self, i: int) -> np.ndarray:
        p = self.indptr
        return self.nbr[p[i]:p[i + 1]]

    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    @cached_property
    def _edge_lookup(self) -> dict:
        return {(int(i), int(j)): k for k, (i, j) in enumerate(self.edges)}

    def edge_id(self, i: int, j: int) -> int:
        """Index of the undirected edge ``{i, j}``; ``KeyError`` if absent."""
        if i > j:
            i, j = j, i
        return self._edge_lookup[(int(i), int(j))]

    def has_edge(self, i: int, j: int) -> bool:
        if i > j:
            i, j = j, i
        return (int(i), int(j)) in self._edge_lookup

    def is_connected(self) -> bool:
        if self.n_vertices <= 1:
            return True
        return len(self.component_of(self.root)) == self.n_vertices

    def component_of(self, start: int) -> set[int]:
        seen = {int(start)}
        stack = [int(start)]
        while stack:
            i = stack.pop()
            for j in self.neighbours(i):
                j = int(j)
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return seen

    def with_root(self, root: int) -> "Graph":
        return Graph(self.n_vertices, self.edges, root)

    def induced(self, vertices) -> tuple["Graph", np.ndarray]:
        """Induced subgraph; returns it with the array of original labels."""
        vertices = np.asarray(sorted({int(v) for v in vertices}), dtype=np.int64)
        local = {int(v): k for k, v in enumerate(vertices)}
        keep = [(local[int(i)], local[int(j)]) for i, j in self.edges
                if int(i) in local and int(j) in local]
        root = local.get(self.root, 0)
        return Graph(len(vertices), np.array(keep, dtype=np.int64).reshape(-1, 2), root), vertices


def single_edge() -> Graph:
    return Graph(2, [(0, 1)])


def path_graph(n: int) -> Graph:
    return Graph(n, [(k, k + 1) for k in range(n - 1)])


def cycle_graph(n: int) -> Graph:
    return Graph(n, [(k, (k + 1) % n) for k in range(n)])


def triangle() -> Graph:
    return cycle_graph(3)


def star_graph(leaves: int) -> Graph:
    return Graph(leaves + 1, [(0, k) for k in range(1, leaves + 1)])


def complete_graph(n: int) -> Graph:
    return Graph(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def random_connected_graph(n: int, rng: np.random.Generator, p: float = 0.5) -> Graph:
    """Random spanning tree plus each remaining pair independently with prob. ``p``."""
    order = rng.permutation(n)
    edges = set()
    for k in range(1, n):
        j = int(order[rng.integers(k)])
        i = int(order[k])
        edges.add((min(i, j), max(i, j)))
    for i in range(n):
        for j in range(i + 1, n):
            if (i, j) not in edges and rng.random() < p:
                edges.add((i, j))
    return Graph(n, sorted(edges))
