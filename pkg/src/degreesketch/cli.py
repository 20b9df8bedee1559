"""Command-line front end.

Every output embeds the run configuration: JSON-lines outputs start with a
``{"config": ...}`` line and CSV outputs carry ``# config: ...`` comments.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence, TextIO

import numpy as np

from . import graph as G
from .cluster import Cluster, Partitioner, PartitionMode
from .degreesketch import (
    DegreeSketch,
    DominationPolicy,
    accumulate,
    edge_heavy_hitters,
    estimate_neighborhoods,
    load_store,
    save_store,
    vertex_heavy_hitters,
)
from .hll import CalibrationError, HllParams, calibrate_beta, default_cardinality_grid, write_calibration
from .intersect import Method

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INVARIANT = 0, 1, 2, 3


class UsageError(Exception):
    pass


# ----------------------------------------------------------------- run config


@dataclass(frozen=True)
class RunConfig:
    p: int = 12
    seed: int = 0
    workers: int = 1
    partitioner: str = "rr"
    estimator: str = "mle"
    domination_policy: str = "keep"
    t_max: int = 3
    k: int = 10
    heap_k: int = 10
    out: str = "-"
    scheduler_seed: int | None = None
    dense_only: bool = False
    threaded: bool = False

    def validate(self) -> RunConfig:
        if not 4 <= self.p <= 16:
            raise UsageError("--prefix-bits must be in [4, 16]")
        if not 0 <= self.seed < 2**64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        if self.workers < 1:
            raise UsageError("--workers must be >= 1")
        if self.t_max < 1:
            raise UsageError("--t-max must be >= 1")
        if self.k < 1 or self.heap_k < 1:
            raise UsageError("--k and --heap-k must be >= 1")
        if self.threaded and self.scheduler_seed is not None:
            raise UsageError("--threaded and --scheduler-seed are exclusive")
        PartitionMode(self.partitioner)
        Method(self.estimator)
        DominationPolicy(self.domination_policy)
        return self

    def params(self) -> HllParams:
        return HllParams(self.p, self.seed)

    def partition(self) -> Partitioner:
        return Partitioner(self.workers, PartitionMode(self.partitioner), self.seed)

    def cluster(self) -> Cluster:
        return Cluster(self.partition(), scheduler_seed=self.scheduler_seed, threaded=self.threaded)

    def to_dict(self) -> dict[str, Any]:
        # The destination is left out so reruns into other paths stay byte-identical.
        d = asdict(self)
        del d["out"]
        return d

    def header(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _config(args: argparse.Namespace) -> RunConfig:
    fields = RunConfig.__dataclass_fields__
    values = {k: getattr(args, k) for k in fields if getattr(args, k, None) is not None}
    if values.get("estimator") == "ie":
        values["estimator"] = Method.INCLUSION_EXCLUSION.value
    if getattr(args, "drop_dominated", None):
        values["domination_policy"] = args.drop_dominated
    return RunConfig(**values).validate()


# ------------------------------------------------------------------- helpers


class _Output:
    def __init__(self, path: str) -> None:
        self.path = path
        self.fh: TextIO | None = None

    def __enter__(self) -> TextIO:
        if self.path == "-":
            return sys.stdout
        Path(self.path).parent.mkdir(parents=True, exist_ok=True)
        self.fh = open(self.path, "w", encoding="utf-8", newline="")
        return self.fh

    def __exit__(self, *exc: Any) -> None:
        if self.fh is not None:
            self.fh.close()


def _comments(fh: TextIO, items: dict[str, Any]) -> None:
    for key, value in items.items():
        fh.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")


def _load_graph(path: str) -> G.EdgeList:
    return G.parse_edge_stream(path)


def _store_for(cfg: RunConfig, g: G.EdgeList, store_dir: str | None,
               timings: dict[str, float]) -> DegreeSketch:
    t0 = time.perf_counter()
    if store_dir:
        store = load_store(store_dir)
        if (store.params.p, store.params.seed) != (cfg.p, cfg.seed):
            raise UsageError("store was built with a different --prefix-bits/--seed")
        if store.partitioner != cfg.partition():
            store = store.reshard(cfg.partition())
        timings["load"] = time.perf_counter() - t0
    else:
        store = accumulate(g, cfg.params(), cfg.partition(), dense_only=cfg.dense_only,
                           cluster=cfg.cluster())
        timings["accumulate"] = time.perf_counter() - t0
    return store


def _fmt(x: float) -> str:
    return repr(float(x))


# ------------------------------------------------------------------ commands


def cmd_accumulate(args: argparse.Namespace) -> int:
    cfg = _config(args)
    if cfg.out == "-":
        raise UsageError("accumulate needs --out DIR")
    g = _load_graph(args.graph)
    store = accumulate(g, cfg.params(), cfg.partition(), dense_only=cfg.dense_only, cluster=cfg.cluster())
    save_store(store, cfg.out, extra=cfg.to_dict())
    return EXIT_OK


def cmd_nbhd(args: argparse.Namespace) -> int:
    cfg = _config(args)
    g = _load_graph(args.graph)
    timings: dict[str, float] = {}
    store = _store_for(cfg, g, args.store, timings)
    t0 = time.perf_counter()
    res = estimate_neighborhoods(g, store, cfg.t_max, dense_only=cfg.dense_only, cluster=cfg.cluster())
    timings["neighborhoods"] = time.perf_counter() - t0
    with _Output(cfg.out) as fh:
        head: dict[str, Any] = {"config": cfg.to_dict()}
        if args.timing:
            head["wall_time_s"] = timings
        fh.write(json.dumps(head, sort_keys=True) + "\n")
        for t in range(1, cfg.t_max + 1):
            for x, e in res.estimates(t).items():
                fh.write(f'{{"x": {x}, "t": {t}, "estimate": {_fmt(e)}}}\n')
        for t in range(1, cfg.t_max + 1):
            fh.write(f'{{"t": {t}, "total": {_fmt(res.total(t))}}}\n')
    return EXIT_OK


def _triangle_cmd(args: argparse.Namespace, vertex: bool) -> int:
    cfg = _config(args)
    g = _load_graph(args.graph)
    timings: dict[str, float] = {}
    store = _store_for(cfg, g, args.store, timings)
    t0 = time.perf_counter()
    fn = vertex_heavy_hitters if vertex else edge_heavy_hitters
    res = fn(g, store, cfg.heap_k, cfg.estimator, cfg.domination_policy,
             full_table=args.full_table, cluster=cfg.cluster())
    timings["triangles"] = time.perf_counter() - t0
    meta: dict[str, Any] = {"config": cfg.to_dict(), "total_triangles": res.total,
                            "diagnostics": res.diagnostics}
    if args.timing:
        meta["wall_time_s"] = timings
    header = ["v", "triangles"] if vertex else ["u", "v", "triangles"]
    if args.full_table:
        rows = G.oracle_topk(res.table, len(res.table))
    else:
        rows = [(i, s) for s, i in res.top()]
    with _Output(cfg.out) as fh:
        _comments(fh, meta)
        fh.write(",".join(header) + "\n")
        for ident, score in rows:
            ids = [ident] if vertex else list(ident)
            fh.write(",".join(str(i) for i in ids) + "," + _fmt(score) + "\n")
    return EXIT_OK


def cmd_edge_hh(args: argparse.Namespace) -> int:
    return _triangle_cmd(args, vertex=False)


def cmd_vertex_hh(args: argparse.Namespace) -> int:
    return _triangle_cmd(args, vertex=True)


def cmd_kron(args: argparse.Namespace) -> int:
    factors = [_load_graph(f) for f in args.factors]
    if len(factors) == 1:
        factors.append(factors[0])
    if len(factors) != 2:
        raise UsageError("kron takes one or two factor files")
    spec = G.KroneckerSpec(factors[0], factors[1], edge_cap=args.edge_cap)
    prod = G.kronecker_product(spec)
    edges, counts = G.kron_edge_triangle_table(spec, prod)
    vt = G.oracle_vertex_triangle_table(prod, counts)
    total = G.global_triangles(counts, vt)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    info = [f"kron of {args.factors[0]} and {args.factors[-1]}", f"triangles={total}"]
    G.write_edge_stream(prod, f"{prefix}.txt", header=info)
    G.write_table_csv(f"{prefix}.edges.csv", ((u, v, c) for (u, v), c in zip(edges.tolist(), counts.tolist())),
                      ["u", "v", "triangles"], info)
    G.write_table_csv(f"{prefix}.vertices.csv", ((v, int(c)) for v, c in enumerate(vt.tolist())),
                      ["v", "triangles"], info)
    return EXIT_OK


def cmd_oracle(args: argparse.Namespace) -> int:
    g = _load_graph(args.graph)
    if g.m and int(g.edges.max()) >= g.n:
        raise UsageError("oracle needs vertex ids 0..n-1 without gaps")
    info = [f"oracle {args.kind} of {args.graph}"]
    out = args.out
    with _Output(out) as fh:
        for line in info:
            fh.write(f"# {line}\n")
        if args.kind == "edge":
            counts = G.oracle_edge_triangle_table(g)
            G.global_triangles(counts, G.oracle_vertex_triangle_table(g, counts))
            fh.write("u,v,triangles\n")
            for (u, v), c in zip(g.edges.tolist(), counts.tolist()):
                fh.write(f"{u},{v},{c}\n")
        elif args.kind == "vertex":
            vt = G.oracle_vertex_triangle_table(g)
            fh.write("v,triangles\n")
            for v, c in enumerate(vt.tolist()):
                fh.write(f"{v},{c}\n")
        elif args.kind == "degree":
            deg = np.diff(g.adjacency().indptr)
            fh.write("v,degree\n")
            for v, d in enumerate(deg.tolist()):
                fh.write(f"{v},{d}\n")
        else:
            sizes = G.oracle_neighborhood_sizes(g, args.t_max, self_mode=args.self_mode)
            fh.write("v,t,size\n")
            for v in range(g.n):
                for t in range(args.t_max):
                    fh.write(f"{v},{t + 1},{sizes[v, t]}\n")
    return EXIT_OK


def cmd_calibrate(args: argparse.Namespace) -> int:
    p = args.prefix_bits
    if not 4 <= p <= 16:
        raise UsageError("--prefix-bits must be in [4, 16]")
    grid = default_cardinality_grid(p) if args.grid is None else [int(x) for x in args.grid.split(",")]
    coeffs = calibrate_beta(p, args.trials, grid, rng_seed=args.rng_seed)
    if args.out == "-":
        sys.stdout.write(f"p={p}\n" + " ".join(f"{c:.17g}" for c in coeffs) + "\n")
    else:
        write_calibration(args.out, p, coeffs)
    return EXIT_OK


# ---------------------------------------------------------------------- eval


def _read_meta(path: str) -> dict[str, Any]:
    meta = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, sep, value = line[1:].strip().partition(": ")
            if sep:
                try:
                    meta[key] = json.loads(value)
                except ValueError:
                    meta[key] = value
    return meta


def _read_scores(path: str) -> dict[tuple[int, ...], float]:
    header, rows = G.read_table_csv(path)
    if "triangles" not in header:
        raise G.ParseError(f"{path}: no 'triangles' column")
    col = header.index("triangles")
    id_cols = [i for i, h in enumerate(header) if h not in ("triangles", "rank")]
    out: dict[tuple[int, ...], float] = {}
    for n, row in enumerate(rows, 2):
        try:
            out[tuple(int(row[i]) for i in id_cols)] = float(row[col])
        except (ValueError, IndexError):
            raise G.ParseError(f"{path}: malformed row {n}: {row}") from None
    return out


def _id_check(est: Iterable[Any], truth: dict) -> None:
    bad = [i for i in est if i not in truth]
    if bad:
        shown = ", ".join(str(b if len(b) > 1 else b[0]) if isinstance(b, tuple) else str(b) for b in bad[:10])
        raise UsageError(f"{len(bad)} estimate ids missing from the oracle, first: {shown}")


def mre(pairs: Iterable[tuple[float, float]]) -> tuple[float, int, int]:
    """Mean |T - E| / T over pairs with T > 0; also the compared and zero-truth counts."""
    errs, zeros = [], 0
    for truth, est in pairs:
        if truth == 0:
            zeros += 1
            continue
        errs.append(abs(truth - est) / abs(truth))
    return (math.fsum(errs) / len(errs) if errs else float("nan")), len(errs), zeros


def precision_recall(truth: dict, est: dict, k: int, heap_k: int) -> dict[str, Any]:
    true_top = {i for i, _ in G.oracle_topk(truth, k)}
    est_top = [i for i, _ in G.oracle_topk(est, heap_k)]
    tp = sum(1 for i in est_top if i in true_top)
    fp = len(est_top) - tp
    fn = len(true_top) - tp
    return {"k": k, "heap_k": heap_k, "tp": tp, "fp": fp, "fn": fn,
            "precision": tp / (tp + fp) if tp + fp else float("nan"),
            "recall": tp / (tp + fn) if tp + fn else float("nan")}


def _eval_nbhd(est_path: str, oracle_path: str) -> dict[str, Any]:
    est: dict[tuple[int, int], float] = {}
    config = None
    with open(est_path, "r", encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            rec = json.loads(line)
            if "config" in rec:
                config = rec
            elif "x" in rec:
                est[(int(rec["x"]), int(rec["t"]))] = float(rec["estimate"])
    header, rows = G.read_table_csv(oracle_path)
    if header != ["v", "t", "size"]:
        raise G.ParseError(f"{oracle_path}: expected header v,t,size")
    truth = {(int(v), int(t)): int(s) for v, t, s in rows}
    _id_check(est, truth)
    by_t: dict[int, list[tuple[float, float]]] = {}
    for key, e in est.items():
        by_t.setdefault(key[1], []).append((truth[key], e))
    table = {}
    for t in sorted(by_t):
        m, n, z = mre(by_t[t])
        table[str(t)] = {"mre": m, "compared": n, "zero_truth": z}
    return {"kind": "neighborhood", "per_t_mre": table, "estimates_header": config}


def cmd_eval(args: argparse.Namespace) -> int:
    est_path, oracle_path = args.estimates, args.oracle
    with open(est_path, "r", encoding="utf-8") as fh:
        first = fh.readline()
    if first.startswith("{"):
        report = _eval_nbhd(est_path, oracle_path)
    else:
        est = _read_scores(est_path)
        truth = _read_scores(oracle_path)
        _id_check(est, truth)
        m, n, z = mre((truth[i], e) for i, e in est.items())
        heap_ks = args.heap_k or [args.k]
        meta = _read_meta(est_path)
        diag = meta.get("diagnostics", {})
        evaluated = diag.get("edges_evaluated", 0)
        dom = diag.get("dominated", {})
        report = {
            "kind": "triangles",
            "mre": m,
            "compared": n,
            "zero_truth": z,
            "precision_recall": [precision_recall(truth, est, args.k, hk) for hk in heap_ks],
            "domination": {
                "counts": dom,
                "rate": (sum(dom.values()) / evaluated) if evaluated else None,
                "nonconverged": diag.get("nonconverged"),
            },
            "wall_time_s": meta.get("wall_time_s"),
            "estimates_config": meta.get("config"),
        }
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    return EXIT_OK


# -------------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # usage errors exit 1
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _run_flags(sp: argparse.ArgumentParser, store: bool = True) -> None:
    sp.add_argument("--prefix-bits", dest="p", type=int, help="HLL prefix size p (default 12)")
    sp.add_argument("--seed", type=int, help="hash seed (default 0)")
    sp.add_argument("--workers", type=int, help="number of simulated workers (default 1)")
    sp.add_argument("--partitioner", choices=["rr", "hash"], help="vertex partitioning")
    sp.add_argument("--scheduler-seed", type=int, help="randomize message delivery order")
    sp.add_argument("--threaded", action="store_true", default=None, help="one thread per worker")
    sp.add_argument("--dense-only", action="store_true", default=None, help="never use sparse sketches")
    sp.add_argument("--out", help="output path (default stdout)")
    if store:
        sp.add_argument("--store", help="load a saved store instead of accumulating")
        sp.add_argument("--timing", action="store_true", help="include wall times in the output")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="degreesketch", description="Sketch-based local graph queries.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("accumulate", help="build and save a sketch store")
    sp.add_argument("graph")
    _run_flags(sp, store=False)
    sp.set_defaults(func=cmd_accumulate)

    sp = sub.add_parser("nbhd", help="estimate t-hop neighborhood sizes")
    sp.add_argument("graph")
    _run_flags(sp)
    sp.add_argument("--t-max", type=int, help="largest hop count (default 3)")
    sp.set_defaults(func=cmd_nbhd)

    for name, func, what in (("edge-hh", cmd_edge_hh, "edges"), ("vertex-hh", cmd_vertex_hh, "vertices")):
        sp = sub.add_parser(name, help=f"triangle heavy-hitter {what}")
        sp.add_argument("graph")
        _run_flags(sp)
        sp.add_argument("--estimator", choices=["mle", "ie", "inclusion_exclusion"],
                        help="intersection estimator (default mle)")
        sp.add_argument("--heap-k", type=int, help="heap capacity (default 10)")
        sp.add_argument("--k", type=int, help="evaluation set size (recorded in the config)")
        sp.add_argument("--drop-dominated", nargs="?", const="strict", choices=["strict", "all"],
                        help="zero estimates under (strict) domination")
        sp.add_argument("--full-table", action="store_true", help=f"write estimates for all {what}")
        sp.set_defaults(func=func)

    sp = sub.add_parser("kron", help="Kronecker product with exact triangle tables")
    sp.add_argument("factors", nargs="+")
    sp.add_argument("--out", required=True, help="output prefix")
    sp.add_argument("--edge-cap", type=int, default=G.DEFAULT_EDGE_CAP)
    sp.set_defaults(func=cmd_kron)

    sp = sub.add_parser("oracle", help="exact tables for a graph")
    sp.add_argument("graph")
    sp.add_argument("--kind", choices=["edge", "vertex", "degree", "nbhd"], default="edge")
    sp.add_argument("--t-max", type=int, default=3)
    sp.add_argument("--self-mode", choices=["walk", "exclude", "include"], default="walk")
    sp.add_argument("--out", default="-")
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("eval", help="compare estimates with an oracle table")
    sp.add_argument("estimates")
    sp.add_argument("oracle")
    sp.add_argument("--k", type=int, default=10)
    sp.add_argument("--heap-k", type=int, nargs="*", help="one or more estimated-set sizes")
    sp.add_argument("--out", default="-")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("calibrate-beta", help="fit LogLogBeta bias coefficients")
    sp.add_argument("--prefix-bits", type=int, required=True)
    sp.add_argument("--trials", type=int, default=200)
    sp.add_argument("--rng-seed", type=int, default=None, help="defaults to p")
    sp.add_argument("--grid", help="comma-separated cardinalities")
    sp.add_argument("--out", default="-")
    sp.set_defaults(func=cmd_calibrate)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return int(exc.code or 0)
    if getattr(args, "rng_seed", 0) is None:
        args.rng_seed = args.prefix_bits
    try:
        return args.func(args)
    except (UsageError, CalibrationError) as exc:
        print(f"degreesketch: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, G.ParseError, json.JSONDecodeError) as exc:
        print(f"degreesketch: {exc}", file=sys.stderr)
        return EXIT_IO
    except AssertionError as exc:
        print(f"degreesketch: internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except ValueError as exc:
        print(f"degreesketch: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
