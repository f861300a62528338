"""Command-line front end.

One experiment per invocation::

    errwlab check-ward --graph edge --a 4 --m 1 --seed 1 --out runs/ward

Settings come from an optional JSON file (``--config``) overridden by flags.
Each run writes ``report.json``, ``data.csv`` and ``repro.txt`` into the output
directory. Exit status: 0 when every check passes, 2 when a check is marginal
or suspicious, 1 on error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KINDS = ("simulate-errw", "simulate-vrjp", "check-ward", "check-protected", "check-moments",
         "check-fluctuations", "check-goodpoints", "check-resistance-bound",
         "escape-probability", "pipeline")
GRAPHS = ("box", "edge", "triangle", "cycle4")
CHI_KINDS = ("check-protected", "check-goodpoints", "check-resistance-bound")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    kind: str
    dim: int = 3
    radius: int = 1
    graph: str = "box"
    a: float = 1.0
    a_file: str | None = None
    b: float = 2.0
    alpha: float = 0.125
    m: float = 1.0
    seed: int = 0
    chains: int = 1
    sweeps: int = 100_000
    burnin: int = 100_000
    thin: int = 10
    out: str = "errwlab-out"
    workers: int = 1
    steps: int = 1000
    runs: int = 10_000
    method: str = "errw"
    level: int = 1
    samples: int = 100
    lengths: list = field(default_factory=lambda: [10, 20, 40])
    K: int = 200

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _errors(cfg: RunConfig) -> list[str]:
    err = []
    if cfg.kind not in KINDS:
        err.append(f"kind: unknown experiment {cfg.kind!r}")
    if cfg.graph not in GRAPHS:
        err.append(f"graph: must be one of {', '.join(GRAPHS)}")
    if cfg.dim < 1:
        err.append("dim: must be a positive integer")
    if cfg.radius < 0 or (cfg.kind in ("escape-probability", "pipeline") and cfg.radius < 1):
        err.append("radius: must be at least 1 for this experiment" if cfg.radius >= 0
                   else "radius: must be non-negative")
    if not (isinstance(cfg.a, (int, float)) and math.isfinite(cfg.a) and cfg.a > 0):
        err.append("a: edge weights must satisfy positivity (a > 0)")
    if not cfg.b > 1:
        err.append("b: must exceed 1")
    if cfg.alpha < 0:
        err.append("alpha: must be non-negative")
    elif cfg.kind in CHI_KINDS and cfg.alpha > 0.125:
        err.append("alpha: must lie in [0, 1/8] for this experiment")
    if cfg.kind in ("check-ward", "check-protected") and cfg.a > 0 and cfg.m > cfg.a / 4:
        err.append("m: must not exceed a/4")
    if cfg.kind == "check-moments" and cfg.a > 0 and cfg.m > cfg.a / 2:
        err.append("m: must not exceed a/2")
    if cfg.m < 0 or (cfg.kind == "check-fluctuations" and cfg.m == 0):
        err.append("m: must be positive")
    for name in ("chains", "workers", "thin", "K"):
        if getattr(cfg, name) < 1:
            err.append(f"{name}: must be at least 1")
    for name in ("sweeps", "burnin", "steps", "runs", "samples"):
        if getattr(cfg, name) < 0:
            err.append(f"{name}: must be non-negative")
    if cfg.kind in ("check-ward", "check-protected", "check-moments", "check-fluctuations",
                    "pipeline") and cfg.sweeps < cfg.thin:
        err.append("sweeps: must be at least thin")
    if cfg.method not in ("errw", "mixture"):
        err.append("method: must be 'errw' or 'mixture'")
    if cfg.level < 0 or cfg.level > 2:
        err.append("level: must lie in {0, 1, 2}")
    if cfg.kind == "check-protected" and cfg.graph == "box" and cfg.radius < 1:
        err.append("radius: must be at least 1 for this experiment")
    return err


def _coerce(name: str, value):
    f = _FIELDS[name]
    t = f.type
    if value is None:
        return None
    if "list" in str(t):
        return [int(v) for v in value]
    if "int" in str(t) and "float" not in str(t):
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{name}: expected an integer")
        return int(value)
    if "float" in str(t):
        return float(value)
    return str(value)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="errwlab", description="Reinforced walk experiments.")
    p.add_argument("kind", choices=KINDS)
    p.add_argument("--config", help="JSON file with settings; flags take precedence")
    for name, f in _FIELDS.items():
        if name == "kind":
            continue
        flag = "--" + name.replace("_", "-")
        if name == "lengths":
            p.add_argument(flag, type=int, nargs="+", default=None)
        elif name == "burnin":
            p.add_argument(flag, "--burn-in", dest="burnin", type=int, default=None)
        else:
            typ = int if "int" in str(f.type) and "float" not in str(f.type) else (
                float if "float" in str(f.type) else str)
            p.add_argument(flag, dest=name, type=typ, default=None)
    return p


def parse_config(argv=None) -> RunConfig:
    """Resolve a configuration from flags and an optional JSON file.

    Raises ``ConfigError`` listing every offending field.
    """
    args = build_parser().parse_args(argv)
    values: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config: file {path} does not exist")
        data = json.loads(path.read_text())
        unknown = sorted(set(data) - set(_FIELDS))
        if unknown:
            raise ConfigError("config: unknown key(s) " + ", ".join(unknown))
        for k, v in data.items():
            values[k] = _coerce(k, v)
    for k in _FIELDS:
        v = getattr(args, k, None)
        if v is not None:
            values[k] = v
    values["kind"] = args.kind
    cfg = RunConfig(**values)
    err = _errors(cfg)
    if err:
        raise ConfigError("; ".join(err))
    return cfg


def repro_command(cfg: RunConfig) -> str:
    parts = ["errwlab", cfg.kind]
    for k, v in cfg.to_dict().items():
        if k == "kind" or v is None:
            continue
        flag = "--" + k.replace("_", "-")
        if isinstance(v, list):
            parts.append(flag + " " + " ".join(str(x) for x in v))
        else:
            parts.append(f"{flag} {v}")
    return " ".join(parts)


def build_id() -> str:
    """Version plus a hash of the package sources (stable for a given build)."""
    from importlib.metadata import PackageNotFoundError, version

    try:
        ver = version("artifact")
    except PackageNotFoundError:
        ver = "0+unknown"
    h = hashlib.sha1()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return f"{ver}+g{h.hexdigest()[:12]}"


# ---------------------------------------------------------------- experiments

def _graph(cfg: RunConfig):
    from .graph import cycle_graph, single_edge, triangle
    from .lattice import LatticeBox

    if cfg.graph == "box":
        return LatticeBox(cfg.dim, cfg.radius)
    return {"edge": single_edge, "triangle": triangle, "cycle4": lambda: cycle_graph(4)}[cfg.graph]()


def _plain(g):
    from .lattice import LatticeRegion

    return g.graph if isinstance(g, LatticeRegion) else g


def _weights(cfg: RunConfig, g):
    from .environment import EdgeWeights

    graph = _plain(g)
    if cfg.a_file:
        vals = np.loadtxt(cfg.a_file, dtype=float, ndmin=1)
        return EdgeWeights(vals)
    return EdgeWeights.uniform(graph, cfg.a)


def _params(cfg: RunConfig):
    from .mcmc import McmcParams

    return McmcParams(burn_in=cfg.burnin, sweeps=cfg.sweeps, thin=cfg.thin)


def _neighbour(g, k: int = 0, sign: int = 1) -> int:
    from .lattice import LatticeRegion

    if isinstance(g, LatticeRegion):
        p = np.zeros(g.dim, dtype=np.int64)
        p[k] = sign
        return g.index_of(tuple(p))
    graph = _plain(g)
    return int(graph.neighbours(graph.root)[0])


def _chain_rows(chains, values=None):
    rows = [["chain", "iteration", "log_density", "acceptance"] + (["value"] if values else [])]
    for c, ch in enumerate(chains):
        for k in range(len(ch)):
            row = [c, ch.burn_in + (k + 1) * ch.thin, f"{ch.logp[k]:.12g}",
                   f"{ch.acceptance_trace[k]:.6f}"]
            if values:
                row.append(f"{values[c][k]:.12g}")
            rows.append(row)
    return rows


def _report(check, **extra):
    d = check.to_dict()
    d.update(extra)
    return d


def _run_simulate(cfg, kind):
    from .walkers import run_errw, run_vrjp

    g = _graph(cfg)
    graph = _plain(g)
    a = _weights(cfg, g)
    if kind == "errw":
        tr = run_errw(graph, a, cfg.steps, cfg.seed)
        Z = a.values.copy()
        for i, j in zip(tr.vertices[:-1], tr.vertices[1:]):
            Z[graph.edge_id(int(i), int(j))] += 1
        ok = math.isclose(float(np.sum(Z - a.values)), cfg.steps)
        summary = {"steps": tr.steps, "final_vertex": int(tr.vertices[-1]),
                   "crossings": float(np.sum(Z - a.values))}
    else:
        tr = run_vrjp(graph, a, cfg.steps, cfg.seed)
        elapsed = float(np.sum(tr.holding))
        L = np.ones(graph.n_vertices)
        np.add.at(L, tr.vertices, tr.holding)
        ok = abs(float(np.sum(L - 1)) - elapsed) <= 1e-10 * max(1.0, elapsed)
        summary = {"steps": tr.steps, "final_vertex": int(tr.vertices[-1]), "elapsed": elapsed}
    tr.validate(graph)
    rows = [["step", "vertex", "holding_time"]]
    for k, v in enumerate(tr.vertices):
        rows.append([k, int(v), "" if tr.holding is None else f"{tr.holding[k]:.12g}"])
    report = {"name": f"simulate-{kind}", "estimate": None, "stderr": None, "target": None,
              "verdict": "pass" if ok else "suspicious", **summary}
    return report, rows


def _run_ward(cfg):
    from .ward import CheckReport, WardSpec, WardTerm, batch_means, run_chains, ward_identity_estimate

    g = _graph(cfg)
    a = _weights(cfg, g)
    graph = _plain(g)
    x, y = graph.root, _neighbour(g)
    chains = run_chains(a, graph, _params(cfg), cfg.seed, cfg.chains, cfg.workers)
    est = ward_identity_estimate(graph, a, WardSpec([WardTerm(x, y, cfg.m)]), _params(cfg),
                                 cfg.seed, samples=chains)
    bm = batch_means([ch.b_pair(x, y) ** cfg.m for ch in chains])
    rep = CheckReport.from_estimate("ward-identity", est, 1.0, pair=[x, y], m=cfg.m,
                                    B_moment={"estimate": bm.mean, "stderr": bm.stderr},
                                    acceptance=[ch.acceptance for ch in chains])
    vals = [ch.b_pair(x, y) ** cfg.m for ch in chains]
    return rep.to_dict(), _chain_rows(chains, vals)


def _run_protected(cfg):
    from .lattice import LatticeRegion
    from .network import ChiParams
    from .ward import CheckReport, WardSpec, WardTerm, protected_ward_estimate, run_chains

    g = _graph(cfg)
    a = _weights(cfg, g)
    graph = _plain(g)
    if isinstance(g, LatticeRegion):
        x1, y1 = graph.root, _neighbour(g, 0, 1)
        if g.dim >= 2:
            e2 = np.zeros(g.dim, dtype=np.int64)
            e2[1] = 1
            x2 = g.index_of(tuple(e2))
            e2[0] = -1
            y2 = g.index_of(tuple(e2))
        else:
            x2, y2 = _neighbour(g, 0, -1), graph.root
    else:
        (x1, y1), (x2, y2) = graph.edges[0], graph.edges[-1]
    terms = [WardTerm(int(x1), int(y1), cfg.m, [int(x1), int(y1)]),
             WardTerm(int(x2), int(y2), cfg.m, [int(x2), int(y2)])]
    chains = run_chains(a, graph, _params(cfg), cfg.seed, cfg.chains, cfg.workers)
    res = protected_ward_estimate(g, a, WardSpec(terms, ChiParams(cfg.b, cfg.alpha)),
                                  _params(cfg), cfg.seed, samples=chains)
    plain = CheckReport.from_estimate("protected-ward-plain", res["plain"], 1.0, "upper")
    prot = CheckReport.from_estimate("protected-ward", res["protected"], 1.0, "upper",
                                     plain=plain.to_dict(),
                                     chi_bar_rate=res["chi_bar_rate"].mean,
                                     pairs=[[t.x, t.y] for t in terms])
    worst = max((plain, prot), key=lambda r: ("pass", "marginal", "suspicious").index(r.verdict))
    d = prot.to_dict()
    d["verdict"] = worst.verdict
    return d, _chain_rows(chains)


def _run_moments(cfg):
    from .lattice import LatticeRegion
    from .ward import CheckReport, moment_bound_estimate, run_chains

    g = _graph(cfg)
    a = _weights(cfg, g)
    graph = _plain(g)
    if isinstance(g, LatticeRegion):
        edges = [(graph.root, _neighbour(g, k)) for k in range(min(g.dim, 2))]
    else:
        edges = [tuple(int(v) for v in e) for e in graph.edges[:2]]
    chains = run_chains(a, graph, _params(cfg), cfg.seed, cfg.chains, cfg.workers)
    est = moment_bound_estimate(graph, a, edges, [cfg.m] * len(edges), _params(cfg), cfg.seed,
                                samples=chains)
    rep = CheckReport.from_estimate("moment-bound", est, 2.0 ** len(edges), "upper",
                                    edges=[list(map(int, e)) for e in edges], m=cfg.m)
    return rep.to_dict(), _chain_rows(chains)


def _run_fluctuations(cfg):
    from .lattice import LatticeRegion
    from .ward import CheckReport, fluctuation_estimate, run_chains

    g = _graph(cfg)
    a = _weights(cfg, g)
    graph = _plain(g)
    root = graph.root
    pairs = [(root, v) for v in range(graph.n_vertices) if v != root]
    if isinstance(g, LatticeRegion) and cfg.radius >= 1:
        lo = tuple([-cfg.radius] * cfg.dim)
        hi = tuple([cfg.radius] * cfg.dim)
        pairs.append((g.index_of(lo), g.index_of(hi)))
    chains = run_chains(a, graph, _params(cfg), cfg.seed, cfg.chains, cfg.workers)
    ests = fluctuation_estimate(graph, a, cfg.m, pairs, _params(cfg), cfg.seed, samples=chains)
    reps = [CheckReport.from_estimate("fluctuation", e, 2.0, "upper", pair=list(p))
            for p, e in zip(pairs, ests)]
    order = ("pass", "marginal", "suspicious")
    worst = max(reps, key=lambda r: (order.index(r.verdict), r.estimate))
    d = worst.to_dict()
    d["name"] = "fluctuation-bound"
    d["all_below_threshold"] = bool(all(r.estimate < 2 for r in reps))
    d["verdict"] = worst.verdict
    rows = [["x", "y", "estimate", "stderr", "verdict"]]
    rows += [[p[0], p[1], f"{r.estimate:.12g}", f"{r.stderr:.12g}", r.verdict]
             for p, r in zip(pairs, reps)]
    return d, rows


def _run_goodpoints(cfg):
    from .environment import FieldConfig
    from .lattice import LatticeBox
    from .network import ChiParams
    from .ward import good_point_check, run_chains

    if cfg.graph != "box":
        raise ConfigError("graph: good points need a lattice box")
    side = 4 ** cfg.level
    radius = max(cfg.radius, side // 2 if side > 1 else 1)
    box = LatticeBox(cfg.dim, radius)
    a = _weights(dataclasses.replace(cfg, radius=radius), box)
    chi = ChiParams(cfg.b, cfg.alpha)
    thin = max(1, cfg.sweeps // max(cfg.samples, 1))
    params = _params(cfg).scaled(sweeps=thin * cfg.samples, thin=thin)
    chains = run_chains(a, box.graph, params, cfg.seed, 1, 1)
    rows = [["sample", "left", "right_indicator", "right"]]
    ok = True
    z = tuple([0] * cfg.dim)
    for k, c in enumerate(chains[0].configs()):
        r = good_point_check(box, FieldConfig(box.graph, c.u, c.s), chi, z, cfg.level, cfg.m)
        ok &= r.holds
        rows.append([k, r.left, f"{r.right_indicator:.12g}", f"{r.right:.12g}"])
    lefts = [float(r[1]) for r in rows[1:]]
    report = {"name": "good-point-decomposition", "estimate": float(np.mean(lefts)) if lefts else 0.0,
              "stderr": None, "target": None, "verdict": "pass" if ok else "suspicious",
              "samples": len(lefts), "box_radius": radius}
    return report, rows


def _run_resistance(cfg):
    from .environment import FieldConfig
    from .lattice import build_diamond
    from .network import ChiParams
    from .spread import resistance_bound_check

    chi = ChiParams(cfg.b, cfg.alpha)
    rows = [["length", "members", "h", "a_times_DN", "flow_energy"]]
    vals, ok = [], True
    for L in cfg.lengths:
        y = [0] * cfg.dim
        y[0] = int(L)
        dia = build_diamond([0] * cfg.dim, y, "deformed")
        fc = FieldConfig.zeros(dia.region.graph)
        rep = resistance_bound_check(fc, cfg.a, dia, chi, K=cfg.K, seed=cfg.seed)
        ok &= rep.holds
        vals.append(rep.a_times_DN)
        rows.append([L, len(dia.members), rep.h, f"{rep.a_times_DN:.12g}",
                     f"{rep.flow_energy_bound:.12g}"])
    ratio = max(vals) / min(vals)
    report = {"name": "resistance-bound", "estimate": max(vals), "stderr": None, "target": None,
              "verdict": "pass" if ok else "suspicious", "plateau_ratio": ratio,
              "empirical_constant": max(vals)}
    return report, rows


def _run_escape(cfg):
    from .walkers import escape_probability_experiment

    r = escape_probability_experiment(cfg.dim, cfg.radius, cfg.a, cfg.runs, cfg.seed, cfg.method,
                                      workers=cfg.workers)
    report = {"name": "escape-probability", **r.to_dict(), "target": None,
              "verdict": "pass"}
    rows = [["metric", "value"], ["estimate", f"{r.estimate:.12g}"],
            ["stderr", f"{r.stderr:.12g}"], ["runs", r.runs], ["censored", r.censored]]
    return report, rows


def _run_pipeline(cfg):
    from .lattice import LatticeBox
    from .ward import pipeline_deterministic, run_chains, transience_pipeline_check

    box = LatticeBox(cfg.dim, cfg.radius)
    a = _weights(cfg, box)
    chains = run_chains(a, box.graph, _params(cfg), cfg.seed, cfg.chains, cfg.workers, joint=True)
    rep = transience_pipeline_check(cfg.dim, cfg.radius, a, _params(cfg), cfg.seed, samples=chains)
    det = pipeline_deterministic(cfg.dim, cfg.radius)
    ok = rep.jensen_ok and rep.batches_jensen_ok and math.isclose(det["c0_R"], det["two_d_R_unit"],
                                                                 rel_tol=1e-10)
    report = {"name": "transience-pipeline", "estimate": rep.ratio, "stderr": rep.ratio_stderr,
              "target": None, "verdict": "pass" if ok else "suspicious",
              "mean_c0R": rep.mean_c0R.mean, "R_unit": rep.R_unit,
              "escape_from_environment": rep.escape_from_environment.mean,
              "escape_stderr": rep.escape_from_environment.stderr,
              "jensen_ok": rep.jensen_ok, "deterministic": det}
    return report, _chain_rows(chains)


RUNNERS = {
    "simulate-errw": lambda c: _run_simulate(c, "errw"),
    "simulate-vrjp": lambda c: _run_simulate(c, "vrjp"),
    "check-ward": _run_ward,
    "check-protected": _run_protected,
    "check-moments": _run_moments,
    "check-fluctuations": _run_fluctuations,
    "check-goodpoints": _run_goodpoints,
    "check-resistance-bound": _run_resistance,
    "escape-probability": _run_escape,
    "pipeline": _run_pipeline,
}


def _json_default(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def run(cfg: RunConfig) -> int:
    """Execute one experiment and write its artefacts; returns the exit code."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    report, rows = RUNNERS[cfg.kind](cfg)
    report["config"] = cfg.to_dict()
    report["build"] = build_id()
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True,
                                                default=_json_default) + "\n")
    with open(out / "data.csv", "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    (out / "repro.txt").write_text(repro_command(cfg) + "\n")
    return 0 if report.get("verdict") == "pass" else 2


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"errwlab: configuration error: {exc}", file=sys.stderr)
        return 1
    try:
        code = run(cfg)
    except Exception as exc:  # reported with context, mapped to exit 1
        print(f"errwlab: {cfg.kind} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(Path(cfg.out) / "report.json")
    return code


if __name__ == "__main__":
    sys.exit(main())
