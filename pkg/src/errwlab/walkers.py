"""Exact simulators for the edge-reinforced walk and the vertex-reinforced jump process.

The ERRW crosses edge ``e`` from its current vertex with probability
proportional to ``Z(e)``, the initial weight plus the number of crossings so
far. The VRJP jumps from ``i`` to ``j`` at rate ``w_ij L_j`` where ``L_j`` is one
plus the time already spent at ``j``. Running the VRJP with independent
``Gamma(a_e, 1)`` conductances and forgetting the holding times gives a walk
with the same law as the ERRW with weights ``a``; both routes are implemented
so that they can be compared against each other and against the exact path
probabilities.

Scalar step functions are plain Python; bulk sampling uses numba kernels.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba as nb
import numpy as np

from .environment import EdgeWeights
from .graph import Graph
from .streams import make_rng, resolve_rng

STEP_CAP = 10_000_000


def _weights(a, graph: Graph) -> np.ndarray:
    if isinstance(a, EdgeWeights):
        v = a.values
    elif np.isscalar(a):
        v = EdgeWeights.uniform(graph, float(a)).values
    else:
        v = EdgeWeights(a).values
    if len(v) != graph.n_edges:
        raise ValueError("one weight per edge is required")
    return np.ascontiguousarray(v, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class ErrwState:
    """Edge counters ``Z``, current vertex and number of steps taken."""

    graph: Graph
    a: np.ndarray
    Z: np.ndarray
    position: int
    step: int = 0

    @classmethod
    def fresh(cls, graph: Graph, a, start: int | None = None) -> "ErrwState":
        av = _weights(a, graph)
        return cls(graph, av, av.copy(), graph.root if start is None else int(start), 0)

    def check(self) -> None:
        if np.any(self.Z < self.a - 1e-12):
            raise AssertionError("edge counter below its initial weight")
        if not math.isclose(float(np.sum(self.Z - self.a)), self.step, abs_tol=1e-9):
            raise AssertionError("crossing count does not match the step index")


@dataclass(frozen=True, eq=False)
class VrjpState:
    """Conductances, local times ``L`` (one plus time spent), position and clock."""

    graph: Graph
    w: np.ndarray
    L: np.ndarray
    position: int
    time: float = 0.0

    @classmethod
    def fresh(cls, graph: Graph, w, start: int | None = None) -> "VrjpState":
        wv = _weights(w, graph)
        return cls(graph, wv, np.ones(graph.n_vertices), graph.root if start is None else int(start))

    def check(self) -> None:
        if np.any(self.L < 1.0):
            raise AssertionError("local time below one")
        if abs(float(np.sum(self.L - 1.0)) - self.time) > 1e-10 * max(1.0, self.time):
            raise AssertionError("local times do not add up to the elapsed time")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Visited vertices, with ``holding[k]`` the time spent at ``vertices[k]``.

    ``holding`` is ``None`` for discrete-time walks. For continuous-time runs
    stopped after a jump the last entry is zero; runs stopped at a horizon
    carry the partial sojourn there.
    """

    kind: str
    vertices: np.ndarray
    holding: np.ndarray | None = None
    seed: int | None = None

    def __len__(self):
        return len(self.vertices)

    @property
    def steps(self) -> int:
        return len(self.vertices) - 1

    def validate(self, graph: Graph) -> None:
        v = self.vertices
        for k in range(len(v) - 1):
            if not graph.has_edge(int(v[k]), int(v[k + 1])):
                raise ValueError(f"vertices {v[k]} and {v[k + 1]} at step {k} are not adjacent")
        if self.holding is not None and len(self.holding) != len(v):
            raise ValueError("holding times must align with vertices")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["step", "vertex", "holding_time"])
            for k, v in enumerate(self.vertices):
                h = "" if self.holding is None else f"{self.holding[k]:.12g}"
                wr.writerow([k, int(v), h])


# ---------------------------------------------------------------- single steps

def errw_step(state: ErrwState, rng: np.random.Generator) -> ErrwState:
    g = state.graph
    i = state.position
    p0, p1 = g.indptr[i], g.indptr[i + 1]
    if p1 == p0:
        raise ValueError(f"vertex {i} is isolated")
    eids = g.eid[p0:p1]
    z = state.Z[eids]
    k = int(np.searchsorted(np.cumsum(z), rng.random() * z.sum(), side="right"))
    k = min(k, len(z) - 1)
    Z = state.Z.copy()
    Z[eids[k]] += 1.0
    return ErrwState(g, state.a, Z, int(g.nbr[p0 + k]), state.step + 1)


def errw_path_probability(graph: Graph, a, path) -> float:
    """Exact probability that the ERRW started at ``path[0]`` follows ``path``.

    A path with fewer than two vertices has probability one.
    """
    path = [int(v) for v in path]
    Z = _weights(a, graph).copy()
    prob = 1.0
    for i, j in zip(path[:-1], path[1:]):
        if not graph.has_edge(i, j):
            raise ValueError(f"path uses the non-edge ({i}, {j})")
        p0, p1 = graph.indptr[i], graph.indptr[i + 1]
        e = graph.edge_id(i, j)
        prob *= Z[e] / Z[graph.eid[p0:p1]].sum()
        Z[e] += 1.0
    return prob


def vrjp_step(state: VrjpState, rng: np.random.Generator) -> tuple[VrjpState, float]:
    """One sojourn and jump; returns the new state and the holding time."""
    g = state.graph
    i = state.position
    p0, p1 = g.indptr[i], g.indptr[i + 1]
    nb_ = g.nbr[p0:p1]
    rates = state.w[g.eid[p0:p1]] * state.L[nb_]
    total = rates.sum()
    if not total > 0:
        raise ValueError(f"vertex {i} has no outgoing rate")
    tau = rng.exponential(1.0 / total)
    L = state.L.copy()
    L[i] += tau
    k = int(np.searchsorted(np.cumsum(rates), rng.random() * total, side="right"))
    k = min(k, len(rates) - 1)
    return VrjpState(g, state.w, L, int(nb_[k]), state.time + tau), tau


# ---------------------------------------------------------------- kernels

@nb.njit(cache=True, nogil=True)
def _pick(weights, n, u):
    acc = 0.0
    for k in range(n):
        acc += weights[k]
        if u < acc:
            return k
    return n - 1


@nb.njit(cache=True, nogil=True)
def _errw_paths(indptr, nbr, eid, a, start, steps, runs, rng):
    out = np.empty((runs, steps + 1), dtype=np.int64)
    Z = a.copy()
    buf = np.empty(indptr.shape[0])
    for r in range(runs):
        Z[:] = a
        v = start
        out[r, 0] = v
        for t in range(steps):
            p0 = indptr[v]
            k = indptr[v + 1] - p0
            tot = 0.0
            for q in range(k):
                buf[q] = Z[eid[p0 + q]]
                tot += buf[q]
            q = _pick(buf, k, rng.random() * tot)
            Z[eid[p0 + q]] += 1.0
            v = nbr[p0 + q]
            out[r, t + 1] = v
    return out


@nb.njit(cache=True, nogil=True)
def _vrjp_run(indptr, nbr, eid, w, L, start, steps, horizon, rng):
    """VRJP for ``steps`` jumps or until time ``horizon``; mutates ``L``."""
    verts = np.empty(steps + 1, dtype=np.int64)
    hold = np.zeros(steps + 1)
    buf = np.empty(indptr.shape[0])
    v = start
    verts[0] = v
    t = 0.0
    n = 0
    while n < steps:
        p0 = indptr[v]
        k = indptr[v + 1] - p0
        tot = 0.0
        for q in range(k):
            buf[q] = w[eid[p0 + q]] * L[nbr[p0 + q]]
            tot += buf[q]
        tau = rng.exponential(1.0 / tot)
        if t + tau >= horizon:
            tau = horizon - t
            L[v] += tau
            hold[n] = tau
            t = horizon
            break
        L[v] += tau
        hold[n] = tau
        t += tau
        q = _pick(buf, k, rng.random() * tot)
        v = nbr[p0 + q]
        n += 1
        verts[n] = v
    return verts[:n + 1], hold[:n + 1], t


@nb.njit(cache=True, nogil=True)
def _mixture_paths(indptr, nbr, eid, a, start, steps, runs, rng):
    nv = indptr.shape[0] - 1
    out = np.empty((runs, steps + 1), dtype=np.int64)
    w = np.empty(a.shape[0])
    L = np.ones(nv)
    for r in range(runs):
        for e in range(a.shape[0]):
            w[e] = rng.gamma(a[e], 1.0)
        L[:] = 1.0
        verts, _, _ = _vrjp_run(indptr, nbr, eid, w, L, start, steps, np.inf, rng)
        out[r] = verts
    return out


@nb.njit(cache=True, nogil=True)
def _local_times(indptr, nbr, eid, w, start, checkpoints, rng):
    """Local times of a VRJP from ``start`` at each (sorted) checkpoint time."""
    nv = indptr.shape[0] - 1
    out = np.empty((checkpoints.shape[0], nv))
    L = np.ones(nv)
    buf = np.empty(nv + 1)
    v = start
    t = 0.0
    c = 0
    while c < checkpoints.shape[0]:
        p0 = indptr[v]
        k = indptr[v + 1] - p0
        tot = 0.0
        for q in range(k):
            buf[q] = w[eid[p0 + q]] * L[nbr[p0 + q]]
            tot += buf[q]
        tau = rng.exponential(1.0 / tot)
        while c < checkpoints.shape[0] and t + tau >= checkpoints[c]:
            out[c] = L
            out[c, v] += checkpoints[c] - t
            c += 1
        L[v] += tau
        t += tau
        q = _pick(buf, k, rng.random() * tot)
        v = nbr[p0 + q]
    return out


@nb.njit(cache=True, nogil=True)
def _escape_errw(indptr, nbr, eid, a, boundary, start, runs, cap, rng):
    ne = a.shape[0]
    Z = a.copy()
    dirty = np.zeros(ne, dtype=np.bool_)
    elist = np.empty(ne, dtype=np.int64)
    buf = np.empty(indptr.shape[0])
    hits = 0
    censored = 0
    for r in range(runs):
        nel = 0
        v = start
        steps = 0
        outcome = -1
        while steps < cap:
            p0 = indptr[v]
            k = indptr[v + 1] - p0
            tot = 0.0
            for q in range(k):
                buf[q] = Z[eid[p0 + q]]
                tot += buf[q]
            q = _pick(buf, k, rng.random() * tot)
            e = eid[p0 + q]
            if not dirty[e]:
                dirty[e] = True
                elist[nel] = e
                nel += 1
            Z[e] += 1.0
            v = nbr[p0 + q]
            steps += 1
            if boundary[v]:
                outcome = 1
                break
            if v == start:
                outcome = 0
                break
        for f in range(nel):
            Z[elist[f]] = a[elist[f]]
            dirty[elist[f]] = False
        if outcome == 1:
            hits += 1
        elif outcome == -1:
            censored += 1
    return hits, censored


@nb.njit(cache=True, nogil=True)
def _escape_mixture(indptr, nbr, eid, a, boundary, start, runs, cap, rng):
    nv = indptr.shape[0] - 1
    ne = a.shape[0]
    w = np.zeros(ne)
    drawn = np.zeros(ne, dtype=np.bool_)
    L = np.ones(nv)
    seen_v = np.zeros(nv, dtype=np.bool_)
    vlist = np.empty(nv, dtype=np.int64)
    elist = np.empty(ne, dtype=np.int64)
    buf = np.empty(nv + 1)
    hits = 0
    censored = 0
    for r in range(runs):
        nvl = 0
        nel = 0
        v = start
        steps = 0
        outcome = -1
        while steps < cap:
            if not seen_v[v]:
                seen_v[v] = True
                vlist[nvl] = v
                nvl += 1
            p0 = indptr[v]
            k = indptr[v + 1] - p0
            tot = 0.0
            for q in range(k):
                e = eid[p0 + q]
                if not drawn[e]:
                    drawn[e] = True
                    w[e] = rng.gamma(a[e], 1.0)
                    elist[nel] = e
                    nel += 1
                buf[q] = w[e] * L[nbr[p0 + q]]
                tot += buf[q]
            L[v] += rng.exponential(1.0 / tot)
            q = _pick(buf, k, rng.random() * tot)
            v = nbr[p0 + q]
            steps += 1
            if boundary[v]:
                outcome = 1
                break
            if v == start:
                outcome = 0
                break
        for f in range(nvl):
            L[vlist[f]] = 1.0
            seen_v[vlist[f]] = False
        for f in range(nel):
            drawn[elist[f]] = False
        if outcome == 1:
            hits += 1
        elif outcome == -1:
            censored += 1
    return hits, censored


# ---------------------------------------------------------------- public runners

def run_errw(graph: Graph, a, steps: int, rng, start: int | None = None) -> Trajectory:
    gen, seed = resolve_rng(rng)
    av = _weights(a, graph)
    s = graph.root if start is None else int(start)
    out = _errw_paths(graph.indptr, graph.nbr, graph.eid, av, s, int(steps), 1, gen)
    return Trajectory("errw", out[0], None, seed)


def run_vrjp(graph: Graph, w, steps: int, rng, start: int | None = None,
             horizon: float = math.inf) -> Trajectory:
    """VRJP with fixed conductances for ``steps`` jumps or up to time ``horizon``."""
    gen, seed = resolve_rng(rng)
    wv = _weights(w, graph)
    s = graph.root if start is None else int(start)
    L = np.ones(graph.n_vertices)
    verts, hold, _ = _vrjp_run(graph.indptr, graph.nbr, graph.eid, wv, L, s, int(steps),
                               float(horizon), gen)
    return Trajectory("vrjp", verts, hold, seed)


def gamma_mixture_errw(graph: Graph, a, steps: int, rng, start: int | None = None) -> Trajectory:
    """VRJP in independent ``Gamma(a_e, 1)`` conductances; holding times are kept."""
    gen, seed = resolve_rng(rng)
    av = _weights(a, graph)
    w = gen.gamma(av, 1.0)
    s = graph.root if start is None else int(start)
    L = np.ones(graph.n_vertices)
    verts, hold, _ = _vrjp_run(graph.indptr, graph.nbr, graph.eid, w, L, s, int(steps),
                               math.inf, gen)
    return Trajectory("mixture", verts, hold, seed)


def sample_paths(graph: Graph, a, steps: int, runs: int, rng, method: str = "errw",
                 start: int | None = None) -> np.ndarray:
    """``runs`` independent paths of ``steps`` steps, as an integer array."""
    gen, _ = resolve_rng(rng)
    av = _weights(a, graph)
    s = graph.root if start is None else int(start)
    if method == "errw":
        return _errw_paths(graph.indptr, graph.nbr, graph.eid, av, s, int(steps), int(runs), gen)
    if method == "mixture":
        return _mixture_paths(graph.indptr, graph.nbr, graph.eid, av, s, int(steps), int(runs), gen)
    raise ValueError(f"unknown method {method!r}")


def path_law(paths: np.ndarray) -> dict[tuple, float]:
    """Empirical law of the rows of ``paths``."""
    uniq, counts = np.unique(paths, axis=0, return_counts=True)
    return {tuple(int(v) for v in row): c / len(paths) for row, c in zip(uniq, counts)}


def enumerate_paths(graph: Graph, start: int, steps: int) -> list[tuple]:
    paths = [(int(start),)]
    for _ in range(steps):
        paths = [p + (int(j),) for p in paths for j in graph.neighbours(p[-1])]
    return paths


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


# ---------------------------------------------------------------- time change

def clock(traj: Trajectory, s) -> np.ndarray:
    """``C(s) = sum_i (L_i(s)^2 - 1)`` along a continuous-time trajectory."""
    if traj.holding is None:
        raise ValueError("time change needs holding times")
    s = np.atleast_1d(np.asarray(s, dtype=float))
    ends = np.cumsum(traj.holding)
    starts = ends - traj.holding
    out = np.empty(len(s))
    for k, t in enumerate(s):
        L = {}
        for v, t0, h in zip(traj.vertices, starts, traj.holding):
            if t0 >= t:
                break
            L[int(v)] = L.get(int(v), 1.0) + min(h, t - t0)
        out[k] = sum(x * x - 1.0 for x in L.values())
    return out


def time_change(traj: Trajectory) -> Trajectory:
    """Re-express holding times in the clock ``C``.

    A sojourn at ``i`` that raises ``L_i`` from ``l`` to ``l + tau`` advances
    the clock by ``(l + tau)^2 - l^2``. The jump sequence is unchanged.
    """
    if traj.holding is None:
        raise ValueError("time change needs holding times")
    L: dict[int, float] = {}
    out = np.empty(len(traj.holding))
    for k, (v, h) in enumerate(zip(traj.vertices, traj.holding)):
        l0 = L.get(int(v), 1.0)
        l1 = l0 + h
        out[k] = l1 * l1 - l0 * l0
        L[int(v)] = l1
    return Trajectory(traj.kind + "-clock", traj.vertices.copy(), out, traj.seed)


def inverse_clock(traj: Trajectory, c: float) -> float:
    """Real time ``s`` with ``C(s) = c``; exact within each sojourn."""
    if traj.holding is None:
        raise ValueError("time change needs holding times")
    if c < 0:
        raise ValueError("clock values are non-negative")
    L: dict[int, float] = {}
    acc_c = 0.0
    acc_s = 0.0
    for v, h in zip(traj.vertices, traj.holding):
        l0 = L.get(int(v), 1.0)
        dc = (l0 + h) ** 2 - l0 * l0
        if acc_c + dc >= c:
            return acc_s + math.sqrt(l0 * l0 + (c - acc_c)) - l0
        acc_c += dc
        acc_s += h
        L[int(v)] = l0 + h
    raise ValueError("clock value beyond the end of the trajectory")


# ---------------------------------------------------------------- U estimates

def estimate_u_field(graph: Graph, w, horizon, rng, start: int | None = None) -> np.ndarray:
    """``log L_i(T) - log L_{i0}(T)`` from one VRJP run started at the root.

    ``horizon`` may be an increasing sequence of times; the result then has
    one row per time, all from the same run.
    """
    gen, _ = resolve_rng(rng)
    wv = _weights(w, graph)
    T = np.atleast_1d(np.asarray(horizon, dtype=float))
    if np.any(T <= 0) or np.any(np.diff(T) < 0):
        raise ValueError("horizons must be positive and non-decreasing")
    s = graph.root if start is None else int(start)
    L = _local_times(graph.indptr, graph.nbr, graph.eid, wv, s, T, gen)
    U = np.log(L) - np.log(L[:, [graph.root]])
    return U[0] if np.ndim(horizon) == 0 else U


# ---------------------------------------------------------------- escape experiment

@dataclass(frozen=True)
class EscapeResult:
    estimate: float
    stderr: float
    runs: int
    censored: int

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "stderr": self.stderr,
                "runs": self.runs, "censored": self.censored}


def escape_probability_experiment(d: int, n: int, a, runs: int, seed: int, method: str = "errw",
                                  cap: int = STEP_CAP, chunk: int = 10_000,
                                  workers: int = 1) -> EscapeResult:
    """Probability that the walk from 0 reaches the boundary of the box before returning.

    Runs are split into chunks of ``chunk`` with one stream per chunk, so the
    result is independent of ``workers``. Censored runs (step cap reached)
    are excluded from the estimate and reported.
    """
    from .lattice import LatticeBox

    if n < 1:
        raise ValueError("box radius must be at least 1")
    box = LatticeBox(d, n)
    g = box.graph
    av = _weights(a, g)
    kernel = {"errw": _escape_errw, "mixture": _escape_mixture}.get(method)
    if kernel is None:
        raise ValueError(f"unknown method {method!r}")
    bmask = np.ascontiguousarray(box.boundary_mask)
    sizes = [min(chunk, runs - k) for k in range(0, runs, chunk)]

    def job(k):
        return kernel(g.indptr, g.nbr, g.eid, av, bmask, g.root, sizes[k], int(cap),
                      make_rng(seed, k))

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            res = list(ex.map(job, range(len(sizes))))
    else:
        res = [job(k) for k in range(len(sizes))]
    hits = sum(r[0] for r in res)
    cens = sum(r[1] for r in res)
    done = runs - cens
    p = hits / done if done else math.nan
    se = math.sqrt(p * (1 - p) / done) if done else math.nan
    return EscapeResult(p, se, runs, cens)
