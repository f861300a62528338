"""Monte Carlo checks of the Ward identities, moment and fluctuation bounds,
the good-point decomposition and the transience pipeline.

Every estimator returns an :class:`McEstimate` with a batch-means standard
error. A check compares the estimate to its target and gets one of three
verdicts: ``pass`` (within 3 standard errors), ``marginal`` (3 to 4) or
``suspicious`` (beyond 4). One-sided bounds only count excess above the
target.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numba as nb
import numpy as np

from .environment import EdgeWeights, FieldConfig, b_from_values
from .graph import Graph
from .lattice import Diamond, LatticeBox, LatticeRegion, count_trees, split_diamond, subcube_tree
from .mcmc import FieldChain, McmcParams, sample_field_mcmc, sample_joint_mcmc
from .network import (ChiParams, ConductanceNetwork, effective_resistance,
                      effective_resistance_to_set, xy_conductances)

N_BATCHES = 50
PASS_SIGMA = 3.0
SUSPICIOUS_SIGMA = 4.0


# ---------------------------------------------------------------- estimates

@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    samples: int
    ess: float

    def __post_init__(self):
        if self.stderr < 0:
            raise ValueError("standard error must be non-negative")
        if self.ess > self.samples + 1e-9:
            raise ValueError("effective sample size exceeds the sample count")


def batch_means(series, n_batches: int = N_BATCHES) -> McEstimate:
    """Mean with a batch-means standard error.

    ``series`` is one array, or a list of arrays (one per chain); in the latter
    case every chain contributes ``n_batches`` batches.
    """
    chains = [np.asarray(series, float)] if np.ndim(series[0]) == 0 else [np.asarray(c, float) for c in series]
    means = []
    total = 0
    for x in chains:
        nb_ = min(n_batches, len(x))
        if nb_ == 0:
            continue
        size = len(x) // nb_
        means.append(x[:size * nb_].reshape(nb_, size).mean(axis=1))
        total += len(x)
    bm = np.concatenate(means)
    allx = np.concatenate(chains)
    mean = float(allx.mean())
    if len(bm) < 2 or np.ptp(allx) == 0:
        return McEstimate(mean, 0.0, total, float(total))
    se = float(bm.std(ddof=1) / math.sqrt(len(bm)))
    var = float(allx.var(ddof=1))
    ess = min(float(total), var / se ** 2) if se > 0 else float(total)
    return McEstimate(mean, se, total, ess)


def verdict(est: McEstimate, target: float, kind: str = "equal") -> tuple[str, float]:
    """``(verdict, z)`` for an identity (``kind="equal"``) or an upper bound (``kind="upper"``)."""
    diff = est.mean - target
    if kind == "upper":
        diff = max(diff, 0.0)
    elif kind != "equal":
        raise ValueError("kind must be 'equal' or 'upper'")
    if est.stderr == 0:
        z = 0.0 if abs(diff) <= 1e-12 * max(1.0, abs(target)) else math.inf
    else:
        z = abs(diff) / est.stderr
    if z <= PASS_SIGMA:
        return "pass", z
    if z <= SUSPICIOUS_SIGMA:
        return "marginal", z
    return "suspicious", z


@dataclass
class CheckReport:
    name: str
    estimate: float
    stderr: float
    target: float
    verdict: str
    kind: str = "equal"
    z: float = 0.0
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_estimate(cls, name, est: McEstimate, target, kind="equal", **extra):
        v, z = verdict(est, target, kind)
        extra.setdefault("samples", est.samples)
        extra.setdefault("ess", est.ess)
        return cls(name, est.mean, est.stderr, float(target), v, kind, z, extra)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["z"] = None if math.isinf(self.z) else self.z
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_jsonable)

    def append_csv(self, path) -> None:
        """Append one row (name, estimate, stderr, target, verdict) to a run ledger."""
        new = not os.path.exists(path)
        with open(path, "a", newline="") as fh:
            wr = csv.writer(fh)
            if new:
                wr.writerow(["name", "estimate", "stderr", "target", "verdict"])
            wr.writerow([self.name, f"{self.estimate:.12g}", f"{self.stderr:.12g}",
                         f"{self.target:.12g}", self.verdict])


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


# ---------------------------------------------------------------- specs

@dataclass(frozen=True)
class WardTerm:
    """One factor: pair ``(x, y)`` (vertex indices), exponent ``m`` and optional region."""

    x: int
    y: int
    m: float
    region: object = None


@dataclass(frozen=True)
class WardSpec:
    terms: tuple
    chi: ChiParams | None = None

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))

    def check_exponents(self, a_min: float, limit: float) -> None:
        for t in self.terms:
            if t.m < 0 or t.m > limit * a_min + 1e-12:
                raise ValueError(f"exponent m={t.m} outside [0, {limit} a] with a={a_min}")


def _graph_of(box) -> Graph:
    return box.graph if isinstance(box, LatticeRegion) else box


def _weights(a, graph: Graph) -> np.ndarray:
    if isinstance(a, EdgeWeights):
        v = a.values
    elif np.isscalar(a):
        v = np.full(graph.n_edges, float(a))
    else:
        v = EdgeWeights(a).values
    if len(v) != graph.n_edges:
        raise ValueError("one weight per edge is required")
    return v


def run_chains(a, box, params: McmcParams, seed: int, chains: int = 1, workers: int = 1,
               joint: bool = False) -> list[FieldChain]:
    g = _graph_of(box)
    fn = sample_joint_mcmc if joint else sample_field_mcmc
    if workers > 1 and chains > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(lambda c: fn(a, g, params, seed, c), range(chains)))
    return [fn(a, g, params, seed, c) for c in range(chains)]


# ---------------------------------------------------------------- pointwise checks

def pointwise_checks(cfg: FieldConfig, av: np.ndarray, x: int, y: int, net: ConductanceNetwork,
               rng: np.random.Generator | None = None, n_triples: int = 8) -> None:
    """Pointwise checks on a sampled field; raises ``AssertionError`` on failure.

    * ``(c^{xy}_ij / a_ij)^{-1} <= 16 B_iz^2 B_jz^2`` for every edge and ``z in {x, y}``;
    * ``B_pr <= 2 B_pq B_qr`` on random triples.
    """
    g = cfg.graph
    e = g.edges
    u, s = cfg.u, cfg.s
    gam = net.conductance / av
    for z in (x, y):
        biz = b_from_values(u[e[:, 0]], u[z], s[e[:, 0]], s[z])
        bjz = b_from_values(u[e[:, 1]], u[z], s[e[:, 1]], s[z])
        if np.any(1.0 / gam > 16 * biz ** 2 * bjz ** 2 * (1 + 1e-10)):
            raise AssertionError("conductance lower bound violated")
    if rng is not None and g.n_vertices >= 3:
        t = rng.integers(0, g.n_vertices, size=(n_triples, 3))
        bpq = b_from_values(u[t[:, 0]], u[t[:, 1]], s[t[:, 0]], s[t[:, 1]])
        bqr = b_from_values(u[t[:, 1]], u[t[:, 2]], s[t[:, 1]], s[t[:, 2]])
        bpr = b_from_values(u[t[:, 0]], u[t[:, 2]], s[t[:, 0]], s[t[:, 2]])
        if np.any(bpr > 2 * bpq * bqr * (1 + 1e-10)):
            raise AssertionError("B triangle inequality violated")


# ---------------------------------------------------------------- Ward identity

def ward_identity_estimate(box, a, spec: WardSpec, params: McmcParams, seed: int,
                           chains: int = 1, workers: int = 1,
                           samples: list[FieldChain] | None = None) -> McEstimate:
    """Estimate of ``<B_xy^m (1 - m D_xy)>`` with ``D_xy`` the full-network resistance."""
    if len(spec.terms) != 1:
        raise ValueError("the identity takes a single pair")
    g = _graph_of(box)
    av = _weights(a, g)
    t = spec.terms[0]
    spec.check_exponents(float(av.min()), 0.25)
    if t.m == 0:
        n = params.sweeps // params.thin * chains
        return McEstimate(1.0, 0.0, n, float(n))
    chs = samples if samples is not None else run_chains(av, g, params, seed, chains, workers)
    hook_rng = np.random.default_rng(seed)
    series = []
    for ch in chs:
        vals = np.empty(len(ch))
        for k, cfg in enumerate(ch.configs()):
            net = xy_conductances(cfg, av, t.x, t.y)
            D = effective_resistance(net, t.x, t.y)
            B = b_from_values(cfg.u[t.x], cfg.u[t.y], cfg.s[t.x], cfg.s[t.y])
            pointwise_checks(cfg, av, t.x, t.y, net, hook_rng)
            vals[k] = B ** t.m * (1 - t.m * D)
        series.append(vals)
    return batch_means(series)


# ---------------------------------------------------------------- protected Ward

def _region_indices(region, box) -> list[int]:
    if isinstance(region, Diamond):
        if not isinstance(box, LatticeRegion):
            raise ValueError("diamond regions need a lattice box")
        return box.indices_of(region.members).tolist()
    return sorted({int(v) for v in region})


def _internal_edges(g: Graph, verts) -> set:
    vs = set(verts)
    return {k for k, (i, j) in enumerate(g.edges) if int(i) in vs and int(j) in vs}


def check_interior_disjoint(g: Graph, regions) -> None:
    """Regions may share boundary vertices but no edge."""
    seen: set = set()
    for k, r in enumerate(regions):
        e = _internal_edges(g, r)
        if e & seen:
            raise ValueError(f"region {k} overlaps an earlier region")
        seen |= e


def _chi_bar_region(cfg: FieldConfig, box, term: WardTerm, verts, chi: ChiParams) -> bool:
    u, s = cfg.u, cfg.s
    if isinstance(term.region, Diamond):
        rx, ry = split_diamond(term.region, 0.6, 0.6)
        parts = ((term.x, box.indices_of(rx)), (term.y, box.indices_of(ry)))
    else:
        parts = ((term.x, np.asarray(verts)), (term.y, np.asarray(verts)))
    pts = box.points if isinstance(box, LatticeRegion) else None
    for z, part in parts:
        part = part[part != z]
        if len(part) == 0:
            continue
        B = b_from_values(u[z], u[part], s[z], s[part])
        if pts is not None:
            dist = np.linalg.norm(pts[part] - pts[z], axis=1)
        else:
            dist = np.ones(len(part))
        if np.any(B > chi.threshold(dist)):
            return False
    return True


def protected_ward_estimate(box, a, spec: WardSpec, params: McmcParams, seed: int,
                            chains: int = 1, workers: int = 1,
                            samples: list[FieldChain] | None = None) -> dict[str, McEstimate]:
    """``<prod B_i^{m_i} (1 - m_i D^N_i)>`` with and without the indicators ``chi-bar``.

    ``D^N_i`` is the resistance of the ``c^{x_i y_i}`` network restricted to
    the region of term ``i``. Both expectations are bounded by one.
    """
    g = _graph_of(box)
    av = _weights(a, g)
    spec.check_exponents(float(av.min()), 0.25)
    regions = []
    for t in spec.terms:
        if t.region is None:
            raise ValueError("every protected term needs a region")
        verts = _region_indices(t.region, box)
        if t.x not in verts or t.y not in verts:
            raise ValueError("region must contain its pair")
        regions.append(verts)
    check_interior_disjoint(g, regions)
    chi = spec.chi or ChiParams()
    chs = samples if samples is not None else run_chains(av, g, params, seed, chains, workers)
    hook_rng = np.random.default_rng(seed)
    plain, protected, chis = [], [], []
    for ch in chs:
        p1 = np.empty(len(ch))
        p2 = np.empty(len(ch))
        p3 = np.empty(len(ch))
        for k, cfg in enumerate(ch.configs()):
            prod = 1.0
            ind = 1.0
            for t, verts in zip(spec.terms, regions):
                net = xy_conductances(cfg, av, t.x, t.y)
                if k % 10 == 0:
                    pointwise_checks(cfg, av, t.x, t.y, net, hook_rng)
                DN = effective_resistance(net.restrict(verts), t.x, t.y)
                B = b_from_values(cfg.u[t.x], cfg.u[t.y], cfg.s[t.x], cfg.s[t.y])
                prod *= B ** t.m * (1 - t.m * DN)
                ind *= float(_chi_bar_region(cfg, box, t, verts, chi))
            p1[k] = prod
            p2[k] = prod * ind
            p3[k] = ind
        plain.append(p1)
        protected.append(p2)
        chis.append(p3)
    return {"plain": batch_means(plain), "protected": batch_means(protected),
            "chi_bar_rate": batch_means(chis)}


def protected_moment_estimate(box, a, term: WardTerm, chi: ChiParams, params: McmcParams,
                              seed: int, samples: list[FieldChain] | None = None) -> dict:
    """``<B^m chi-bar>`` and the largest ``a D^N`` seen on samples where ``chi-bar`` holds."""
    g = _graph_of(box)
    av = _weights(a, g)
    verts = _region_indices(term.region, box)
    chs = samples if samples is not None else run_chains(av, g, params, seed)
    vals, worst = [], 0.0
    for ch in chs:
        v = np.empty(len(ch))
        for k, cfg in enumerate(ch.configs()):
            B = b_from_values(cfg.u[term.x], cfg.u[term.y], cfg.s[term.x], cfg.s[term.y])
            ok = _chi_bar_region(cfg, box, term, verts, chi)
            v[k] = B ** term.m * ok
            if ok:
                net = xy_conductances(cfg, av, term.x, term.y).restrict(verts)
                worst = max(worst, float(av.min()) * effective_resistance(net, term.x, term.y))
        vals.append(v)
    return {"estimate": batch_means(vals), "max_a_DN": worst}


# ---------------------------------------------------------------- moments and fluctuations

def moment_bound_estimate(box, a, edges, ms, params: McmcParams, seed: int, chains: int = 1,
                          workers: int = 1, samples: list[FieldChain] | None = None) -> McEstimate:
    """Estimate of ``<prod_j B_{e_j}^{m_j}>``; the bound is ``2^n``."""
    g = _graph_of(box)
    av = _weights(a, g)
    edges = [tuple(int(v) for v in e) for e in edges]
    ms = [float(m) for m in ms]
    if len(edges) != len(ms):
        raise ValueError("one exponent per edge")
    for (i, j), m in zip(edges, ms):
        k = g.edge_id(i, j)
        if m < 0 or m > av[k] / 2 + 1e-12:
            raise ValueError(f"exponent {m} on edge ({i}, {j}) exceeds a/2 = {av[k] / 2}")
    n_keep = params.sweeps // params.thin * chains
    if not edges:
        return McEstimate(1.0, 0.0, n_keep, float(n_keep))
    chs = samples if samples is not None else run_chains(av, g, params, seed, chains, workers)
    ids = [g.edge_id(i, j) for i, j in edges]
    series = []
    for ch in chs:
        B = ch.b_edges()[:, ids]
        series.append(np.prod(B ** np.array(ms), axis=1))
    return batch_means(series)


def fluctuation_estimate(box, a, m: float, pairs, params: McmcParams, seed: int,
                         chains: int = 1, workers: int = 1,
                         samples: list[FieldChain] | None = None) -> list[McEstimate]:
    """``<cosh^m(U_x - U_y)>`` for each pair (threshold 2)."""
    if m <= 0:
        raise ValueError("m must be positive")
    pairs = [(int(x), int(y)) for x, y in pairs]
    g = _graph_of(box)
    n_keep = params.sweeps // params.thin * chains
    if all(x == y for x, y in pairs):
        return [McEstimate(1.0, 0.0, n_keep, float(n_keep)) for _ in pairs]
    chs = samples if samples is not None else run_chains(a, g, params, seed, chains, workers)
    out = []
    for x, y in pairs:
        if x == y:
            out.append(McEstimate(1.0, 0.0, n_keep, float(n_keep)))
            continue
        out.append(batch_means([np.cosh(ch.u[:, x] - ch.u[:, y]) ** m for ch in chs]))
    return out


# ---------------------------------------------------------------- good points

@nb.njit(cache=True)
def _pair_sums(points, u, s, xs, lo2, hi2, b, alpha, m):
    """Sum of ``B^m / (b^m |x-y|^{alpha m})`` and of ``1{B > b|x-y|^alpha}``
    over ``x`` in ``xs`` and all ``y`` with ``lo2 < |x-y|^2 <= hi2``."""
    dom = 0.0
    ind = 0.0
    n = points.shape[0]
    d = points.shape[1]
    for a in range(xs.shape[0]):
        x = xs[a]
        for y in range(n):
            r2 = 0
            for k in range(d):
                t = points[x, k] - points[y, k]
                r2 += t * t
            if r2 <= lo2 or r2 > hi2:
                continue
            dist = math.sqrt(r2)
            ds = s[x] - s[y]
            B = math.cosh(u[x] - u[y]) + 0.5 * math.exp(u[x] + u[y]) * ds * ds
            thr = b * dist ** alpha
            dom += (B / thr) ** m
            if B > thr:
                ind += 1.0
    return dom, ind


@nb.njit(cache=True)
def _good_mask(points, u, s, xs, hi2, b, alpha):
    out = np.ones(xs.shape[0], dtype=np.bool_)
    n = points.shape[0]
    d = points.shape[1]
    for a in range(xs.shape[0]):
        x = xs[a]
        for y in range(n):
            r2 = 0
            for k in range(d):
                t = points[x, k] - points[y, k]
                r2 += t * t
            if r2 < 1 or r2 > hi2:
                continue
            ds = s[x] - s[y]
            B = math.cosh(u[x] - u[y]) + 0.5 * math.exp(u[x] + u[y]) * ds * ds
            if B > b * math.sqrt(r2) ** alpha:
                out[a] = False
                break
    return out


def level_window(j: int) -> tuple[int, int]:
    """Squared-distance window ``(lo, hi]`` used at level ``j``: ``4^{j-1} < |x-y| <= 4^j``, or ``|x-y| = 1`` at level 0."""
    if j == 0:
        return 0, 1
    return 16 ** (j - 1), 16 ** j


def n_good_points(box: LatticeRegion, cfg: FieldConfig, chi: ChiParams, xs, n: int) -> np.ndarray:
    """Mask of the points ``xs`` (indices) that are ``n``-good in ``box``."""
    return _good_mask(box.points.astype(np.int64), cfg.u, cfg.s,
                      np.asarray(xs, dtype=np.int64), 16 ** n, chi.b, chi.alpha)


@dataclass(frozen=True)
class GoodPointReport:
    left: float
    right: float
    right_indicator: float
    n_trees: int
    holds: bool

    def to_dict(self) -> dict:
        return asdict(self)


def good_point_check(box: LatticeRegion, cfg: FieldConfig, chi: ChiParams, z, n: int, m: float,
                     enumerate_trees: bool = False, cap: int = 100_000) -> GoodPointReport:
    """Compare ``1{no n-good point in R_n(z)}`` with the tree sum of level sums.

    ``right`` uses the ``B^m`` domination of each indicator, ``right_indicator``
    the indicators themselves (so ``left <= right_indicator <= right``).
    With ``enumerate_trees`` the tree sum is also formed by listing every
    admissible tree, and must agree with the recursion.
    """
    tree = subcube_tree(z, n)
    pts = box.points.astype(np.int64)
    root_pts = tree.root.points()
    if not all(tuple(p) in box for p in root_pts):
        raise ValueError("the cube R_n(z) must lie inside the box")
    dom, ind = {}, {}
    for depth in range(n + 1):
        lo2, hi2 = level_window(n - depth)
        for node in tree.level_nodes(depth):
            xs = box.indices_of(node.points()).astype(np.int64)
            dom[node.word], ind[node.word] = _pair_sums(pts, cfg.u, cfg.s, xs, lo2, hi2,
                                                        chi.b, chi.alpha, float(m))
    good = n_good_points(box, cfg, chi, box.indices_of(root_pts), n)
    left = 0.0 if good.any() else 1.0
    right = tree.tree_sum(dom)
    right_ind = tree.tree_sum(ind)
    n_trees = count_trees(n, box.dim)
    if enumerate_trees:
        if n_trees > cap:
            raise ValueError(f"{n_trees} trees exceed the enumeration cap {cap}")
        r2 = tree.tree_sum_enumerated(dom, cap)
        if not math.isclose(r2, right, rel_tol=1e-9, abs_tol=1e-12):
            raise AssertionError("tree enumeration disagrees with the recursion")
    holds = left <= right_ind + 1e-12 and right_ind <= right * (1 + 1e-12) + 1e-12
    return GoodPointReport(left, right, right_ind, n_trees, holds)


# ---------------------------------------------------------------- transience pipeline

def boundary_resistance(box: LatticeBox, conductance) -> tuple[float, float]:
    """``R(0, boundary)`` and the total conductance at the origin."""
    net = ConductanceNetwork(box.graph, conductance)
    o = box.root
    R = effective_resistance_to_set(net, o, np.flatnonzero(box.boundary_mask).tolist())
    return R, float(net.vertex_conductance[o])


def pipeline_deterministic(d: int, n: int, c: float = 1.0) -> dict:
    """The degenerate case ``U = 0``, ``W = c``: ``c_0 R = 2d R_unit`` exactly."""
    box = LatticeBox(d, n)
    R_unit, _ = boundary_resistance(box, np.ones(box.graph.n_edges))
    R, c0 = boundary_resistance(box, np.full(box.graph.n_edges, c))
    return {"c0_R": c0 * R, "two_d_R_unit": 2 * d * R_unit, "R_unit": R_unit}


@dataclass
class PipelineReport:
    mean_c0R: McEstimate
    R_unit: float
    ratio: float
    ratio_stderr: float
    escape_from_environment: McEstimate
    jensen_ok: bool
    batches_jensen_ok: bool
    acceptance: list

    def to_dict(self) -> dict:
        return asdict(self)


def transience_pipeline_check(d: int, n: int, a, params: McmcParams, seed: int,
                              chains: int = 1, workers: int = 1,
                              samples: list[FieldChain] | None = None) -> PipelineReport:
    """``E[W_0^U R(0, boundary; W e^{U_i + U_j})]`` against the unit-conductance resistance.

    Also reports ``E[1 / (W_0^U R)]``, the escape probability of the
    reinforced walk, and checks ``1/E[P] <= E[1/P]`` on the whole sample and
    on each batch.
    """
    box = LatticeBox(d, n)
    g = box.graph
    av = _weights(a, g)
    chs = samples if samples is not None else run_chains(av, g, params, seed, chains, workers, joint=True)
    bnd = np.flatnonzero(box.boundary_mask).tolist()
    e = g.edges
    series_c0R, series_p = [], []
    for ch in chs:
        vals = np.empty(len(ch))
        for k in range(len(ch)):
            cond = ch.w[k] * np.exp(ch.u[k, e[:, 0]] + ch.u[k, e[:, 1]])
            net = ConductanceNetwork(g, cond)
            R = effective_resistance_to_set(net, box.root, bnd)
            vals[k] = net.vertex_conductance[box.root] * R
        series_c0R.append(vals)
        series_p.append(1.0 / vals)
    R_unit, _ = boundary_resistance(box, np.ones(g.n_edges))
    est = batch_means(series_c0R)
    esc = batch_means(series_p)
    allv = np.concatenate(series_c0R)
    jensen = 1.0 / np.mean(1.0 / allv) <= np.mean(allv) * (1 + 1e-12)
    batch_ok = True
    for v in series_c0R:
        for chunk in np.array_split(v, min(N_BATCHES, len(v))):
            if len(chunk) and 1.0 / np.mean(1.0 / chunk) > np.mean(chunk) * (1 + 1e-12):
                batch_ok = False
    return PipelineReport(est, R_unit, est.mean / R_unit, est.stderr / R_unit, esc,
                          bool(jensen), batch_ok, [ch.acceptance for ch in chs])
