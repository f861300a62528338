"""Lattice geometry: boxes of Z^d, cones, diamonds and the corner-subcube tree."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .graph import Graph

WIDE_ANGLE = math.pi / 4
NARROW_ANGLE = math.pi / 16
_ALLOWED_ANGLES = (WIDE_ANGLE, NARROW_ANGLE)
_REL_TOL = 1e-12


class GeometryError(RuntimeError):
    """A geometric construction violated one of its own guarantees."""


class LatticeRegion:
    """A finite set of points of Z^d with nearest-neighbour edges.

    Points keep the order they were given in; ``graph`` uses those positions as
    vertex labels.
    """

    def __init__(self, points, root=None):
        pts = np.asarray(points, dtype=np.int64)
        if pts.ndim != 2:
            raise ValueError("points must be a 2-d array")
        self.points = pts
        self.points.setflags(write=False)
        self.dim = pts.shape[1]
        self._index = {tuple(int(c) for c in p): k for k, p in enumerate(pts)}
        if len(self._index) != len(pts):
            raise ValueError("duplicate points")
        if root is None:
            root = 0
        elif not isinstance(root, (int, np.integer)):
            root = self.index_of(root)
        self._root = int(root)

    def __len__(self):
        return len(self.points)

    def __contains__(self, p):
        return tuple(int(c) for c in p) in self._index

    @property
    def root(self) -> int:
        return self._root

    def index_of(self, p) -> int:
        try:
            return self._index[tuple(int(c) for c in p)]
        except KeyError:
            raise KeyError(f"point {tuple(p)} is not in the region") from None

    def indices_of(self, pts) -> np.ndarray:
        return np.array([self.index_of(p) for p in np.asarray(pts).reshape(-1, self.dim)],
                        dtype=np.int64)

    @cached_property
    def graph(self) -> Graph:
        edges = []
        for k in range(self.dim):
            shift = np.zeros(self.dim, dtype=np.int64)
            shift[k] = 1
            for i, p in enumerate(self.points):
                j = self._index.get(tuple(int(c) for c in p + shift))
                if j is not None:
                    edges.append((i, j))
        return Graph(len(self.points), np.array(edges, dtype=np.int64).reshape(-1, 2), self._root)

    @cached_property
    def edge_points(self) -> np.ndarray:
        """Edges as pairs of lattice points, shape ``(E, 2, d)``."""
        return self.points[self.graph.edges]

    def grid_lookup(self):
        """Dense index grid: ``(origin, table)`` with ``table[p - origin]`` the
        vertex index of ``p`` or ``-1``."""
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        table = -np.ones(tuple(hi - lo + 1), dtype=np.int64)
        table[tuple((self.points - lo).T)] = np.arange(len(self.points))
        return lo, table


class LatticeBox(LatticeRegion):
    """The box ``V_n = {i in Z^d : |i|_inf <= n}`` rooted at the origin."""

    def __init__(self, dim: int, radius: int):
        if dim < 1:
            raise ValueError("dimension must be positive")
        if radius < 0:
            raise ValueError("radius must be non-negative")
        axis = range(-radius, radius + 1)
        pts = np.array(list(itertools.product(axis, repeat=dim)), dtype=np.int64)
        super().__init__(pts, root=tuple([0] * dim))
        self.radius = radius

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        return np.abs(self.points).max(axis=1) == self.radius

    @property
    def boundary(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_mask)


def cube_region(lower, side: int) -> LatticeRegion:
    """Axis-parallel lattice cube with ``side`` points per axis."""
    lower = np.asarray(lower, dtype=np.int64)
    axes = [range(int(c), int(c) + side) for c in lower]
    return LatticeRegion(np.array(list(itertools.product(*axes)), dtype=np.int64))


def write_points(path, points) -> None:
    """One integer point per line, coordinates separated by spaces."""
    lines = [" ".join(str(int(c)) for c in p) for p in np.asarray(points)]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_points(path) -> np.ndarray:
    rows = [line.split() for line in Path(path).read_text().splitlines() if line.strip()]
    return np.array(rows, dtype=np.int64)


# ---------------------------------------------------------------- cones

def _cone_mask(apex, direction, half_angle, z) -> np.ndarray:
    apex = np.asarray(apex)
    direction = np.asarray(direction)
    v = np.asarray(z) - apex
    dot = v @ direction
    nz2 = np.einsum("...i,...i->...", v, v)
    nd2 = direction @ direction
    integral = (np.issubdtype(v.dtype, np.integer)
                and np.issubdtype(direction.dtype, np.integer))
    if half_angle == WIDE_ANGLE and integral:
        # cos^2(pi/4) = 1/2, exact in integers
        inside = 2 * dot * dot >= nz2 * nd2
    else:
        cos2 = math.cos(half_angle) ** 2
        inside = dot.astype(float) ** 2 >= cos2 * nz2 * nd2 * (1 - _REL_TOL)
    return (nz2 == 0) | ((dot >= 0) & inside)


@dataclass(frozen=True, eq=False)
class Cone:
    apex: np.ndarray
    direction: np.ndarray
    half_angle: float = WIDE_ANGLE

    def __post_init__(self):
        d = np.asarray(self.direction)
        if not np.any(d != 0):
            raise ValueError("cone direction must be nonzero")
        if not any(math.isclose(self.half_angle, a) for a in _ALLOWED_ANGLES):
            raise ValueError("half angle must be pi/4 or pi/16")
        angle = min(_ALLOWED_ANGLES, key=lambda a: abs(a - self.half_angle))
        object.__setattr__(self, "half_angle", angle)
        object.__setattr__(self, "apex", np.asarray(self.apex))
        object.__setattr__(self, "direction", d)

    def contains(self, z):
        """Membership of a point, or of each row of an array of points."""
        z = np.asarray(z)
        out = _cone_mask(self.apex, self.direction, self.half_angle, z)
        return bool(out) if z.ndim == 1 else out


def cone_contains(cone: Cone, z) -> bool:
    return cone.contains(z)


# ---------------------------------------------------------------- diamonds

@dataclass(frozen=True, eq=False)
class Diamond:
    """Exact (pi/4) or deformed (pi/16) diamond between lattice points x and y."""

    x: tuple
    y: tuple
    kind: str
    direction: np.ndarray
    members: np.ndarray
    patch_points: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.x)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.subtract(self.y, self.x)))

    @cached_property
    def region(self) -> LatticeRegion:
        return LatticeRegion(self.members, root=self.x)

    def __contains__(self, p):
        return p in self.region

    def __len__(self):
        return len(self.members)

    def is_connected(self) -> bool:
        return self.region.graph.is_connected()

    def split(self, f_x: float, f_y: float):
        return split_diamond(self, f_x, f_y)


def _components(pts: set) -> list[set]:
    comps = []
    left = set(pts)
    while left:
        start = min(left)
        comp = {start}
        stack = [start]
        left.discard(start)
        while stack:
            p = stack.pop()
            for k in range(len(p)):
                for step in (-1, 1):
                    q = p[:k] + (p[k] + step,) + p[k + 1:]
                    if q in left:
                        left.discard(q)
                        comp.add(q)
                        stack.append(q)
        comps.append(comp)
    return comps


def _staircase(p, q) -> list[tuple]:
    """Lattice points strictly between p and q on the axis-ordered L1 path."""
    cur = list(p)
    out = []
    for k in range(len(p)):
        step = 1 if q[k] > cur[k] else -1
        while cur[k] != q[k]:
            cur[k] += step
            out.append(tuple(cur))
    return out[:-1] if out else out


def _patch(points: set, x: tuple, y: tuple) -> set:
    """Connect ``points`` with L1 staircases; returns the added points."""
    added = set()
    pts = set(points)
    while True:
        comps = _components(pts)
        if len(comps) == 1:
            return added
        comps.sort(key=lambda c: (-len(c), min(c)))
        main = np.array(sorted(comps[0]), dtype=np.int64)
        other = sorted(comps[1], key=lambda p: (p not in (x, y), p))
        src = np.array(other, dtype=np.int64)
        dist = np.abs(src[:, None, :] - main[None, :, :]).sum(axis=2)
        # row-major argmin picks the lexicographically first (apex-first) pair
        a, b = np.unravel_index(np.argmin(dist), dist.shape)
        p, q = tuple(int(c) for c in src[a]), tuple(int(c) for c in main[b])
        for r in _staircase(p, q):
            if r not in pts:
                pts.add(r)
                added.add(r)


def build_diamond(x, y, kind: str = "exact", l=None) -> Diamond:
    """Lattice diamond between ``x`` and ``y``, patched to be connected.

    ``kind="exact"`` intersects the two pi/4 cones along ``y - x`` and
    ``x - y``; ``kind="deformed"`` uses pi/16 cones, the one at ``x`` pointing
    along ``l`` (default ``y - x``), and requires ``y`` inside it.
    """
    x = tuple(int(c) for c in x)
    y = tuple(int(c) for c in y)
    if len(x) != len(y):
        raise ValueError("apexes have different dimensions")
    if x == y:
        raise ValueError("diamond apexes must differ")
    xa, ya = np.array(x), np.array(y)
    if kind == "exact":
        if l is not None and not np.allclose(np.asarray(l, float) / np.linalg.norm(l),
                                             (ya - xa) / np.linalg.norm(ya - xa)):
            raise ValueError("exact diamonds use direction y - x")
        direction = ya - xa
        cx = Cone(xa, direction, WIDE_ANGLE)
        cy = Cone(ya, xa - ya, WIDE_ANGLE)
    elif kind == "deformed":
        direction = ya - xa if l is None else np.asarray(l)
        cx = Cone(xa, direction, NARROW_ANGLE)
        if not cx.contains(ya):
            raise ValueError("y lies outside the deformed cone at x")
        cy = Cone(ya, xa - ya, NARROW_ANGLE)
    else:
        raise ValueError(f"unknown diamond kind {kind!r}")

    half = math.ceil(np.linalg.norm(ya - xa) / 2) + 1
    lo = np.minimum(xa, ya) - half
    hi = np.maximum(xa, ya) + half
    grid = np.stack(np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(lo, hi)],
                                indexing="ij"), axis=-1).reshape(-1, len(x))
    inside = grid[cx.contains(grid) & cy.contains(grid)]
    pts = {tuple(int(c) for c in p) for p in inside}
    pts.update((x, y))
    added = _patch(pts, x, y)
    members = np.array(sorted(pts | added), dtype=np.int64)
    patch = np.array(sorted(added), dtype=np.int64).reshape(-1, len(x))
    dia = Diamond(x, y, kind, np.asarray(direction), members, patch)
    if not dia.is_connected():
        raise GeometryError("patched diamond is not connected")
    return dia


def patch_distance(dia: Diamond) -> float:
    """Largest distance from a patch point to the nearer apex (0 if none)."""
    if len(dia.patch_points) == 0:
        return 0.0
    dx = np.linalg.norm(dia.patch_points - np.array(dia.x), axis=1)
    dy = np.linalg.norm(dia.patch_points - np.array(dia.y), axis=1)
    return float(np.minimum(dx, dy).max())


def split_diamond(dia: Diamond, f_x: float, f_y: float):
    """The two overlapping balls ``R^x``, ``R^y`` (as point arrays) covering ``dia``."""
    tol = 1e-12
    if not (0.2 - tol <= f_x <= 1 + tol and 0.2 - tol <= f_y <= 1 + tol):
        raise ValueError("split fractions must lie in [1/5, 1]")
    if f_x + f_y < 1.2 - tol:
        raise ValueError("split fractions must satisfy f_x + f_y >= 6/5")
    m = dia.members
    L = dia.length
    in_x = np.linalg.norm(m - np.array(dia.x), axis=1) <= f_x * L * (1 + tol)
    in_y = np.linalg.norm(m - np.array(dia.y), axis=1) <= f_y * L * (1 + tol)
    if not np.all(in_x | in_y):
        bad = m[~(in_x | in_y)]
        raise GeometryError(f"split does not cover {len(bad)} member(s), e.g. {tuple(bad[0])}")
    return m[in_x], m[in_y]


def projection_coordinates(x, y, z):
    """``r = (z-x).(y-x)/|y-x|^2`` and the projection ``p = x + r (y-x)``."""
    x, y, z = (np.asarray(v, dtype=float) for v in (x, y, z))
    axis = y - x
    n2 = axis @ axis
    if n2 == 0:
        raise ValueError("x and y must differ")
    r = float((z - x) @ axis / n2)
    return r, x + r * axis


# ---------------------------------------------------------------- subcube tree

@dataclass(frozen=True)
class SubcubeNode:
    word: tuple
    lower: tuple
    side: int

    @property
    def depth(self) -> int:
        return len(self.word)

    def points(self) -> np.ndarray:
        axes = [range(c, c + self.side) for c in self.lower]
        return np.array(list(itertools.product(*axes)), dtype=np.int64)


def cube_distance(a: SubcubeNode, b: SubcubeNode) -> float:
    """Euclidean distance between the closest lattice points of two cubes."""
    gaps = [max(0, lb - (la + a.side - 1), la - (lb + b.side - 1))
            for la, lb in zip(a.lower, b.lower)]
    return math.sqrt(sum(g * g for g in gaps))


def count_trees(n: int, dim: int) -> int:
    """Size of the admissible tree family: every node has 0 or 2^dim children."""
    count = 1
    for _ in range(n):
        count = 1 + count ** (2 ** dim)
    return count


@dataclass(eq=False)
class SubcubeTree:
    """Corner-subcube hierarchy of the cube of side 4^n around ``center``.

    For ``n >= 1`` the cube spans ``center - 4^n/2 .. center + 4^n/2 - 1`` on
    every axis; for ``n = 0`` it is the single point ``center``.
    """

    center: tuple
    n: int
    nodes: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def root(self) -> SubcubeNode:
        return self.nodes[()]

    def children(self, word: tuple) -> list[SubcubeNode]:
        if len(word) >= self.n:
            return []
        return [self.nodes[word + (c,)] for c in range(1, 2 ** self.dim + 1)]

    def level_nodes(self, depth: int) -> list[SubcubeNode]:
        return [v for v in self.nodes.values() if v.depth == depth]

    def tree_sum(self, values: dict) -> float:
        """Sum over admissible trees of the product of ``values`` on leaves."""
        def f(word):
            kids = self.children(word)
            if not kids:
                return values[word]
            prod = 1.0
            for k in kids:
                prod *= f(k.word)
            return values[word] + prod
        return f(())

    def enumerate_leaf_sets(self, cap: int = 100_000) -> list[list[tuple]]:
        total = count_trees(self.n, self.dim)
        if total > cap:
            raise ValueError(f"{total} admissible trees exceed the enumeration cap {cap}")

        def sets(word):
            out = [[word]]
            kids = self.children(word)
            if kids:
                for combo in itertools.product(*[sets(k.word) for k in kids]):
                    out.append([w for part in combo for w in part])
            return out
        return sets(())

    def tree_sum_enumerated(self, values: dict, cap: int = 100_000) -> float:
        return float(sum(math.prod(values[w] for w in leaves)
                         for leaves in self.enumerate_leaf_sets(cap)))


def subcube_tree(z, n: int) -> SubcubeTree:
    if n < 0:
        raise ValueError("n must be non-negative")
    z = tuple(int(c) for c in z)
    dim = len(z)
    side = 4 ** n
    lower = z if n == 0 else tuple(c - side // 2 for c in z)
    tree = SubcubeTree(z, n)
    tree.nodes[()] = SubcubeNode((), lower, side)
    frontier = [tree.nodes[()]]
    for _ in range(n):
        nxt = []
        for node in frontier:
            s = node.side // 4
            for c in range(2 ** dim):
                low = tuple(node.lower[k] + (3 * s if (c >> k) & 1 else 0) for k in range(dim))
                child = SubcubeNode(node.word + (c + 1,), low, s)
                tree.nodes[child.word] = child
                nxt.append(child)
        frontier = nxt
    return tree
