"""Metropolis samplers for the environment measures.

Two chains are provided:

* the (u, s) chain targets the mixed density with ``B_e^{-a_e}`` weights;
* the joint chain targets (w, u, s) with the Gamma(a_e, 1) conductance prior.

Both use single-site Gaussian random-walk proposals (and log-normal moves for
``w``). The determinant in each density is the root-reduced Laplacian minor;
a proposal touches only the edges at one vertex (or one edge), so its
determinant ratio comes from the matrix determinant lemma applied to the
maintained inverse ``G``, which is then updated by Woodbury on acceptance and
rebuilt from scratch once per sweep.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field, replace

import numba as nb
import numpy as np

from .environment import EdgeWeights, FieldConfig, LOG_2PI
from .graph import Graph
from .streams import make_rng

ACCEPT_LOW, ACCEPT_HIGH = 0.05, 0.95


class ChainDiagnosticsWarning(UserWarning):
    pass


@dataclass(frozen=True)
class McmcParams:
    burn_in: int = 100_000
    sweeps: int = 100_000
    thin: int = 10
    step_u: float = 0.5
    step_s: float = 0.5
    step_w: float = 0.3
    target_accept: float = 0.35
    adapt: bool = True
    adapt_window: int = 20

    def __post_init__(self):
        if self.burn_in < 0 or self.sweeps < 0:
            raise ValueError("burn-in and sweep counts must be non-negative")
        if self.thin < 1:
            raise ValueError("thinning must be at least 1")
        if min(self.step_u, self.step_s, self.step_w) <= 0:
            raise ValueError("step sizes must be positive")
        if not 0 < self.target_accept < 1:
            raise ValueError("target acceptance must lie in (0, 1)")
        if self.adapt_window < 1:
            raise ValueError("adaptation window must be positive")

    def scaled(self, **kw) -> "McmcParams":
        return replace(self, **kw)


# ---------------------------------------------------------------- numba kernels

@nb.njit(cache=True, nogil=True)
def _small_det(M, k):
    A = M[:k, :k].copy()
    det = 1.0
    for c in range(k):
        p = c
        best = abs(A[c, c])
        for r in range(c + 1, k):
            if abs(A[r, c]) > best:
                best = abs(A[r, c])
                p = r
        if best == 0.0:
            return 0.0
        if p != c:
            for q in range(k):
                tmp = A[c, q]
                A[c, q] = A[p, q]
                A[p, q] = tmp
            det = -det
        det *= A[c, c]
        for r in range(c + 1, k):
            f = A[r, c] / A[c, c]
            for q in range(c, k):
                A[r, q] -= f * A[c, q]
    return det


@nb.njit(cache=True, nogil=True)
def _rebuild(n, edges, cond, root, G):
    """Recompute ``G`` and return log det of the reduced Laplacian."""
    m = n - 1
    if m == 0:
        G[:, :] = 0.0
        return 0.0
    L = np.zeros((n, n))
    for e in range(edges.shape[0]):
        i = edges[e, 0]
        j = edges[e, 1]
        c = cond[e]
        L[i, i] += c
        L[j, j] += c
        L[i, j] -= c
        L[j, i] -= c
    idx = np.empty(m, dtype=np.int64)
    k = 0
    for v in range(n):
        if v != root:
            idx[k] = v
            k += 1
    N = np.empty((m, m))
    for a in range(m):
        for b in range(m):
            N[a, b] = L[idx[a], idx[b]]
    C = np.linalg.cholesky(N)
    logdet = 0.0
    for a in range(m):
        logdet += 2.0 * math.log(C[a, a])
    Ninv = np.linalg.inv(N)
    G[:, :] = 0.0
    for a in range(m):
        for b in range(m):
            G[idx[a], idx[b]] = 0.5 * (Ninv[a, b] + Ninv[b, a])
    return logdet


@nb.njit(cache=True, nogil=True)
def _det_ratio(G, i, js, dc, k, M):
    """``det(I + diag(dc) U^T G U)`` for ``U = [e_i - e_j]``; fills ``M``."""
    for p in range(k):
        jp = js[p]
        for q in range(k):
            jq = js[q]
            kpq = G[i, i] - G[i, jq] - G[jp, i] + G[jp, jq]
            M[p, q] = dc[p] * kpq + (1.0 if p == q else 0.0)
    return _small_det(M, k)


@nb.njit(cache=True, nogil=True)
def _woodbury(G, i, js, dc, k, M):
    """``G <- G - G U M^{-1} diag(dc) U^T G`` with ``M`` from ``_det_ratio``."""
    n = G.shape[0]
    GU = np.empty((n, k))
    for q in range(k):
        for r in range(n):
            GU[r, q] = G[r, i] - G[r, js[q]]
    T = np.empty((k, n))
    for p in range(k):
        for r in range(n):
            T[p, r] = dc[p] * GU[r, p]
    X = np.linalg.solve(M[:k, :k].copy(), T)
    for r in range(n):
        for q in range(n):
            acc = 0.0
            for p in range(k):
                acc += GU[r, p] * X[p, q]
            G[r, q] -= acc


@nb.njit(cache=True, nogil=True)
def _bval(ui, uj, si, sj):
    d = si - sj
    return math.cosh(ui - uj) + 0.5 * math.exp(ui + uj) * d * d


@nb.njit(cache=True, nogil=True)
def _field_chain(u, s, edges, a, indptr, nbr, eid, root, step_u, step_s,
                 burn_in, sweeps, thin, adapt, target, window, rng):
    n = u.shape[0]
    ne = edges.shape[0]
    B = np.empty(ne)
    cond = np.empty(ne)
    for e in range(ne):
        i = edges[e, 0]
        j = edges[e, 1]
        B[e] = _bval(u[i], u[j], s[i], s[j])
        cond[e] = a[e] * math.exp(u[i] + u[j]) / B[e]
    G = np.zeros((n, n))
    logdet = _rebuild(n, edges, cond, root, G)
    maxdeg = 0
    for v in range(n):
        if indptr[v + 1] - indptr[v] > maxdeg:
            maxdeg = indptr[v + 1] - indptr[v]
    js = np.empty(maxdeg, dtype=np.int64)
    es = np.empty(maxdeg, dtype=np.int64)
    dc = np.empty(maxdeg)
    bnew = np.empty(maxdeg)
    cnew = np.empty(maxdeg)
    M = np.empty((maxdeg, maxdeg))

    n_keep = sweeps // thin
    out_u = np.empty((n_keep, n))
    out_s = np.empty((n_keep, n))
    out_lp = np.empty(n_keep)
    out_acc = np.empty(n_keep)
    acc_u = 0
    acc_s = 0
    prop_u = 0
    prop_s = 0
    win_acc_u = 0
    win_acc_s = 0
    win_prop = 0
    n_win = 0
    kept = 0
    total = burn_in + sweeps
    for sweep in range(total):
        for i in range(n):
            if i == root:
                continue
            p0 = indptr[i]
            k = indptr[i + 1] - p0
            for move in range(2):
                if move == 0:
                    du = step_u * rng.standard_normal()
                    ui = u[i] + du
                    si = s[i]
                else:
                    du = 0.0
                    ui = u[i]
                    si = s[i] + step_s * rng.standard_normal()
                dlp = -du
                for q in range(k):
                    j = nbr[p0 + q]
                    e = eid[p0 + q]
                    js[q] = j
                    es[q] = e
                    bnew[q] = _bval(ui, u[j], si, s[j])
                    cnew[q] = a[e] * math.exp(ui + u[j]) / bnew[q]
                    dc[q] = cnew[q] - cond[e]
                    dlp -= a[e] * (math.log(bnew[q]) - math.log(B[e]))
                ratio = _det_ratio(G, i, js, dc, k, M)
                ok = False
                if ratio > 0.0:
                    dlp += math.log(ratio)
                    if dlp >= 0.0 or rng.random() < math.exp(dlp):
                        ok = True
                if ok:
                    _woodbury(G, i, js, dc, k, M)
                    logdet += math.log(ratio)
                    u[i] = ui
                    s[i] = si
                    for q in range(k):
                        B[es[q]] = bnew[q]
                        cond[es[q]] = cnew[q]
                if sweep >= burn_in:
                    if move == 0:
                        prop_u += 1
                        acc_u += ok
                    else:
                        prop_s += 1
                        acc_s += ok
                else:
                    if move == 0:
                        win_acc_u += ok
                        win_prop += 1
                    else:
                        win_acc_s += ok
        logdet = _rebuild(n, edges, cond, root, G)
        if sweep < burn_in and adapt and win_prop > 0 and (sweep + 1) % window == 0:
            n_win += 1
            gain = 1.0 / math.sqrt(n_win)
            step_u *= math.exp(gain * (win_acc_u / win_prop - target))
            step_s *= math.exp(gain * (win_acc_s / win_prop - target))
            win_acc_u = 0
            win_acc_s = 0
            win_prop = 0
        if sweep >= burn_in and (sweep - burn_in + 1) % thin == 0 and kept < n_keep:
            lp = logdet
            for v in range(n):
                lp -= u[v]
            for e in range(ne):
                lp -= a[e] * math.log(B[e])
            out_u[kept] = u
            out_s[kept] = s
            out_lp[kept] = lp
            out_acc[kept] = (acc_u + acc_s) / max(prop_u + prop_s, 1)
            kept += 1
    return out_u, out_s, out_lp, out_acc, acc_u, prop_u, acc_s, prop_s, step_u, step_s


@nb.njit(cache=True, nogil=True)
def _joint_chain(u, s, w, edges, a, indptr, nbr, eid, root, step_u, step_s, step_w,
                 burn_in, sweeps, thin, adapt, target, window, rng):
    n = u.shape[0]
    ne = edges.shape[0]
    B = np.empty(ne)
    cond = np.empty(ne)
    for e in range(ne):
        i = edges[e, 0]
        j = edges[e, 1]
        B[e] = _bval(u[i], u[j], s[i], s[j])
        cond[e] = w[e] * math.exp(u[i] + u[j])
    G = np.zeros((n, n))
    logdet = _rebuild(n, edges, cond, root, G)
    maxdeg = 1
    for v in range(n):
        if indptr[v + 1] - indptr[v] > maxdeg:
            maxdeg = indptr[v + 1] - indptr[v]
    js = np.empty(maxdeg, dtype=np.int64)
    es = np.empty(maxdeg, dtype=np.int64)
    dc = np.empty(maxdeg)
    bnew = np.empty(maxdeg)
    cnew = np.empty(maxdeg)
    M = np.empty((maxdeg, maxdeg))
    one = np.empty(1, dtype=np.int64)
    dc1 = np.empty(1)

    n_keep = sweeps // thin
    out_u = np.empty((n_keep, n))
    out_s = np.empty((n_keep, n))
    out_w = np.empty((n_keep, ne))
    out_lp = np.empty(n_keep)
    out_acc = np.empty(n_keep)
    acc = np.zeros(3, dtype=np.int64)
    prop = np.zeros(3, dtype=np.int64)
    wacc = np.zeros(3)
    wprop = np.zeros(3)
    steps = np.array([step_u, step_s, step_w])
    n_win = 0
    kept = 0
    total = burn_in + sweeps
    for sweep in range(total):
        for i in range(n):
            if i == root:
                continue
            p0 = indptr[i]
            k = indptr[i + 1] - p0
            for move in range(2):
                du = 0.0
                ui = u[i]
                si = s[i]
                if move == 0:
                    du = steps[0] * rng.standard_normal()
                    ui = u[i] + du
                else:
                    si = s[i] + steps[1] * rng.standard_normal()
                dlp = -du
                for q in range(k):
                    j = nbr[p0 + q]
                    e = eid[p0 + q]
                    js[q] = j
                    es[q] = e
                    bnew[q] = _bval(ui, u[j], si, s[j])
                    cnew[q] = w[e] * math.exp(ui + u[j])
                    dc[q] = cnew[q] - cond[e]
                    dlp -= w[e] * (bnew[q] - B[e])
                ratio = 1.0
                if move == 0:
                    ratio = _det_ratio(G, i, js, dc, k, M)
                ok = False
                if ratio > 0.0:
                    dlp += math.log(ratio)
                    if dlp >= 0.0 or rng.random() < math.exp(dlp):
                        ok = True
                if ok:
                    if move == 0:
                        _woodbury(G, i, js, dc, k, M)
                        logdet += math.log(ratio)
                    u[i] = ui
                    s[i] = si
                    for q in range(k):
                        B[es[q]] = bnew[q]
                        cond[es[q]] = cnew[q]
                if sweep >= burn_in:
                    prop[move] += 1
                    acc[move] += ok
                else:
                    wprop[move] += 1
                    wacc[move] += ok
        for e in range(ne):
            i = edges[e, 0]
            j = edges[e, 1]
            lw = steps[2] * rng.standard_normal()
            wn = w[e] * math.exp(lw)
            cn = wn * math.exp(u[i] + u[j])
            dc1[0] = cn - cond[e]
            one[0] = j
            ratio = _det_ratio(G, i, one, dc1, 1, M)
            ok = False
            if ratio > 0.0:
                dlp = (-(wn - w[e]) * (B[e] - 1.0) + (a[e] - 1.0) * lw - (wn - w[e])
                       + lw + math.log(ratio))
                if dlp >= 0.0 or rng.random() < math.exp(dlp):
                    ok = True
            if ok:
                _woodbury(G, i, one, dc1, 1, M)
                logdet += math.log(ratio)
                w[e] = wn
                cond[e] = cn
            if sweep >= burn_in:
                prop[2] += 1
                acc[2] += ok
            else:
                wprop[2] += 1
                wacc[2] += ok
        logdet = _rebuild(n, edges, cond, root, G)
        if sweep < burn_in and adapt and (sweep + 1) % window == 0:
            n_win += 1
            gain = 1.0 / math.sqrt(n_win)
            for t in range(3):
                if wprop[t] > 0:
                    steps[t] *= math.exp(gain * (wacc[t] / wprop[t] - target))
                wacc[t] = 0.0
                wprop[t] = 0.0
        if sweep >= burn_in and (sweep - burn_in + 1) % thin == 0 and kept < n_keep:
            lp = logdet
            for v in range(n):
                lp -= u[v]
            for e in range(ne):
                lp += -w[e] * (B[e] - 1.0) - w[e] + (a[e] - 1.0) * math.log(w[e])
            out_u[kept] = u
            out_s[kept] = s
            out_w[kept] = w
            out_lp[kept] = lp
            out_acc[kept] = (acc[0] + acc[1] + acc[2]) / max(prop[0] + prop[1] + prop[2], 1)
            kept += 1
    return out_u, out_s, out_w, out_lp, out_acc, acc, prop, steps


# ---------------------------------------------------------------- Python surface

def _as_graph(g) -> Graph:
    return g.graph if hasattr(g, "graph") and not isinstance(g, Graph) else g


def _as_weights(a, graph: Graph) -> np.ndarray:
    if isinstance(a, EdgeWeights):
        v = a.values
    elif np.isscalar(a):
        v = EdgeWeights.uniform(graph, float(a)).values
    else:
        v = EdgeWeights(a).values
    if len(v) != graph.n_edges:
        raise ValueError("one weight per edge is required")
    return np.ascontiguousarray(v, dtype=np.float64)


@dataclass(eq=False)
class FieldChain:
    """Retained states of one chain plus its diagnostics."""

    graph: Graph
    u: np.ndarray
    s: np.ndarray
    logp: np.ndarray
    acceptance_trace: np.ndarray
    acceptance: dict
    steps: dict
    thin: int
    burn_in: int
    seed: int
    chain: int
    w: np.ndarray | None = None
    warnings: list = field(default_factory=list)

    def __len__(self):
        return len(self.u)

    def configs(self):
        for k in range(len(self.u)):
            yield FieldConfig(self.graph, self.u[k], self.s[k])

    def b_edges(self) -> np.ndarray:
        e = self.graph.edges
        i, j = e[:, 0], e[:, 1]
        return (np.cosh(self.u[:, i] - self.u[:, j])
                + 0.5 * np.exp(self.u[:, i] + self.u[:, j]) * (self.s[:, i] - self.s[:, j]) ** 2)

    def b_pair(self, x: int, y: int) -> np.ndarray:
        u, s = self.u, self.s
        return np.cosh(u[:, x] - u[:, y]) + 0.5 * np.exp(u[:, x] + u[:, y]) * (s[:, x] - s[:, y]) ** 2

    def write_csv(self, path) -> None:
        """Chain summary: iteration, log-density, running acceptance."""
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["iteration", "log_density", "acceptance"])
            for k, (lp, acc) in enumerate(zip(self.logp, self.acceptance_trace)):
                wr.writerow([self.burn_in + (k + 1) * self.thin, f"{lp:.12g}", f"{acc:.6f}"])


def _diagnose(acceptance: dict) -> list[str]:
    out = []
    for name, rate in acceptance.items():
        if rate is not None and not ACCEPT_LOW <= rate <= ACCEPT_HIGH:
            out.append(f"{name} acceptance {rate:.3f} outside [{ACCEPT_LOW}, {ACCEPT_HIGH}]")
    for msg in out:
        warnings.warn(msg, ChainDiagnosticsWarning, stacklevel=3)
    return out


def sample_field_mcmc(a, graph, params: McmcParams, seed: int, chain: int = 0,
                      init: FieldConfig | None = None) -> FieldChain:
    """Random-walk Metropolis chain for (u, s) under the mixed measure."""
    g = _as_graph(graph)
    av = _as_weights(a, g)
    rng = make_rng(seed, chain)
    n = g.n_vertices
    u = np.zeros(n) if init is None else np.array(init.u, dtype=float)
    s = np.zeros(n) if init is None else np.array(init.s, dtype=float)
    res = _field_chain(u, s, g.edges, av, g.indptr, g.nbr, g.eid, g.root,
                       params.step_u, params.step_s, params.burn_in, params.sweeps,
                       params.thin, params.adapt, params.target_accept,
                       params.adapt_window, rng)
    out_u, out_s, lp, acc_tr, au, pu, as_, ps, su, ss = res
    const = -(n - 1) * LOG_2PI
    acceptance = {"u": au / pu if pu else None, "s": as_ / ps if ps else None}
    return FieldChain(g, out_u, out_s, lp + const, acc_tr, acceptance,
                      {"u": su, "s": ss}, params.thin, params.burn_in, seed, chain,
                      warnings=_diagnose(acceptance))


def sample_joint_mcmc(a, graph, params: McmcParams, seed: int, chain: int = 0,
                      init_w=None) -> FieldChain:
    """Metropolis-within-Gibbs chain for (w, u, s); ``w`` is kept in ``chain.w``."""
    from scipy.special import gammaln

    g = _as_graph(graph)
    av = _as_weights(a, g)
    rng = make_rng(seed, chain)
    n = g.n_vertices
    u = np.zeros(n)
    s = np.zeros(n)
    w = av.copy() if init_w is None else np.array(init_w, dtype=float)
    res = _joint_chain(u, s, w, g.edges, av, g.indptr, g.nbr, g.eid, g.root,
                       params.step_u, params.step_s, params.step_w, params.burn_in,
                       params.sweeps, params.thin, params.adapt, params.target_accept,
                       params.adapt_window, rng)
    out_u, out_s, out_w, lp, acc_tr, acc, prop, steps = res
    const = -(n - 1) * LOG_2PI - float(np.sum(gammaln(av)))
    names = ("u", "s", "w")
    acceptance = {k: (float(acc[t] / prop[t]) if prop[t] else None) for t, k in enumerate(names)}
    return FieldChain(g, out_u, out_s, lp + const, acc_tr, acceptance,
                      dict(zip(names, map(float, steps))), params.thin, params.burn_in, seed, chain,
                      w=out_w, warnings=_diagnose(acceptance))


def field_to_records(cfg: FieldConfig) -> list[dict]:
    return [{"vertex": k, "u": float(cfg.u[k]), "s": float(cfg.s[k])}
            for k in range(cfg.graph.n_vertices)]


def field_to_json(cfg: FieldConfig) -> str:
    return json.dumps(field_to_records(cfg))


def field_from_json(text: str, graph: Graph) -> FieldConfig:
    recs = json.loads(text)
    u = np.zeros(graph.n_vertices)
    s = np.zeros(graph.n_vertices)
    for r in recs:
        u[int(r["vertex"])] = float(r["u"])
        s[int(r["vertex"])] = float(r["s"])
    return FieldConfig(graph, u, s)
