"""Distributed per-vertex adjacency sketches and the queries built on them.

A :class:`DegreeSketch` maps every vertex of an edge stream to a HyperLogLog
sketch of its neighbor set, sharded across the workers of a
:class:`~degreesketch.cluster.Cluster`. On top of it:

* :func:`accumulate` builds the store in one pass;
* :func:`estimate_neighborhoods` unions neighbor sketches pass by pass to
  estimate the number of vertices within ``t`` hops;
* :func:`edge_heavy_hitters` and :func:`vertex_heavy_hitters` estimate
  local triangle counts by sketch intersection and keep the top ``k``.
"""

from __future__ import annotations

import enum
import heapq
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Hashable, Iterable, Iterator, Sequence

import numpy as np

from .cluster import Cluster, ExactSum, Message, MessageTag, Partitioner, PartitionMode, WorkerContext
from .hll import HllParams, HllSketch
from .intersect import Domination, IntersectionEstimate, Method, estimate_intersection_ie, estimate_intersection_mle

__all__ = [
    "DegreeSketch",
    "DominationPolicy",
    "NeighborhoodResult",
    "ShardStore",
    "TopKHeap",
    "TriangleResult",
    "accumulate",
    "edge_heavy_hitters",
    "estimate_neighborhoods",
    "load_store",
    "save_store",
    "vertex_heavy_hitters",
]


# ------------------------------------------------------------------ top-k heap


class _Entry:
    __slots__ = ("score", "id")

    def __init__(self, score: float, ident: Any) -> None:
        self.score = score
        self.id = ident

    # heapq keeps the worst entry on top: lower score, then larger id.
    def __lt__(self, other: _Entry) -> bool:
        if self.score != other.score:
            return self.score < other.score
        return self.id > other.id


class TopKHeap:
    """The ``k`` best (score, id) pairs under (score desc, id asc)."""

    def __init__(self, k: int) -> None:
        if k < 1:
            raise ValueError("heap capacity must be >= 1")
        self.k = k
        self._heap: list[_Entry] = []

    def __len__(self) -> int:
        return len(self._heap)

    def offer(self, score: float, ident: Any) -> bool:
        """Insert if among the best ``k``; returns whether it was kept."""
        score = float(score)
        if math.isnan(score):
            raise ValueError("NaN score")
        entry = _Entry(score, ident)
        heap = self._heap
        if len(heap) < self.k:
            heapq.heappush(heap, entry)
            return True
        if heap[0] < entry:
            heapq.heapreplace(heap, entry)
            return True
        return False

    def merge(self, other: TopKHeap) -> None:
        for e in other._heap:
            self.offer(e.score, e.id)

    def copy(self) -> TopKHeap:
        out = TopKHeap(self.k)
        out._heap = [_Entry(e.score, e.id) for e in self._heap]
        return out

    def items(self) -> list[tuple[float, Any]]:
        """Entries best first."""
        return [(e.score, e.id) for e in sorted(self._heap, reverse=True)]

    def ids(self) -> list[Any]:
        return [i for _, i in self.items()]

    def min_score(self) -> float:
        return self._heap[0].score if self._heap else -math.inf

    def __repr__(self) -> str:
        return f"TopKHeap(k={self.k}, size={len(self)})"


def topk_of(pairs: Iterable[tuple[float, Any]], k: int) -> TopKHeap:
    h = TopKHeap(k)
    for score, ident in pairs:
        h.offer(score, ident)
    return h


# ----------------------------------------------------------------------- store

_MAGIC = b"DGSK"
_VERSION = 1
_FILE_HEADER = struct.Struct("<4sHBBQIQ")
_VERTEX = struct.Struct("<Q")


class ShardStore:
    """One worker's vertex -> sketch map for one layer."""

    __slots__ = ("worker", "params", "layer", "sketches")

    def __init__(self, worker: int, params: HllParams, layer: int = 1) -> None:
        self.worker = worker
        self.params = params
        self.layer = layer
        self.sketches: dict[int, HllSketch] = {}

    def __len__(self) -> int:
        return len(self.sketches)

    def __contains__(self, v: int) -> bool:
        return v in self.sketches

    def __getitem__(self, v: int) -> HllSketch:
        return self.sketches[v]

    def get_or_create(self, v: int, dense: bool = False) -> HllSketch:
        sk = self.sketches.get(v)
        if sk is None:
            sk = self.sketches[v] = HllSketch(self.params, dense=dense)
        return sk

    def copy(self, layer: int | None = None, dense: bool = False) -> ShardStore:
        out = ShardStore(self.worker, self.params, self.layer if layer is None else layer)
        for v, sk in self.sketches.items():
            c = sk.copy()
            if dense and c._sparse is not None:
                c.saturate()
            out.sketches[v] = c
        return out

    def to_bytes(self) -> bytes:
        p = self.params
        parts = [_FILE_HEADER.pack(_MAGIC, _VERSION, p.p, p.q, p.seed, self.layer, len(self.sketches))]
        for v in sorted(self.sketches):
            parts.append(_VERTEX.pack(v))
            parts.append(self.sketches[v].to_bytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes, params: HllParams, worker: int = 0) -> ShardStore:
        if len(data) < _FILE_HEADER.size:
            raise ValueError("truncated store header")
        magic, version, p, q, seed, layer, count = _FILE_HEADER.unpack_from(data, 0)
        if magic != _MAGIC:
            raise ValueError("not a sketch store file")
        if version != _VERSION:
            raise ValueError(f"unsupported store version {version}")
        if (p, q, seed) != (params.p, params.q, params.seed):
            raise ValueError(f"store params p={p} q={q} seed={seed} do not match")
        out = cls(worker, params, layer)
        offset = _FILE_HEADER.size
        mv = memoryview(data)
        for _ in range(count):
            if offset + _VERTEX.size > len(data):
                raise ValueError("truncated store entry")
            (v,) = _VERTEX.unpack_from(data, offset)
            sk, offset = HllSketch.read_from(params, mv, offset + _VERTEX.size)
            out.sketches[v] = sk
        if offset != len(data):
            raise ValueError("trailing bytes after store entries")
        return out


class DegreeSketch:
    """Sharded vertex -> sketch store (one layer)."""

    def __init__(self, params: HllParams, partitioner: Partitioner, layer: int = 1,
                 shards: Sequence[ShardStore] | None = None) -> None:
        self.params = params
        self.partitioner = partitioner
        self.layer = layer
        if shards is None:
            shards = [ShardStore(w, params, layer) for w in range(partitioner.workers)]
        if len(shards) != partitioner.workers:
            raise ValueError("one shard per worker required")
        self.shards = list(shards)

    def __len__(self) -> int:
        return sum(len(s) for s in self.shards)

    def __contains__(self, v: int) -> bool:
        return v in self.shards[self.partitioner(v)]

    def __getitem__(self, v: int) -> HllSketch:
        return self.shards[self.partitioner(v)][v]

    def vertices(self) -> list[int]:
        return sorted(v for s in self.shards for v in s.sketches)

    def items(self) -> Iterator[tuple[int, HllSketch]]:
        for v in self.vertices():
            yield v, self[v]

    def copy(self, layer: int | None = None, dense: bool = False) -> DegreeSketch:
        layer = self.layer if layer is None else layer
        return DegreeSketch(self.params, self.partitioner, layer,
                            [s.copy(layer, dense) for s in self.shards])

    def same_registers(self, other: DegreeSketch) -> bool:
        """Same vertex set and register-identical sketches (sharding ignored)."""
        if not self.params.compatible(other.params):
            return False
        mine, theirs = self.vertices(), other.vertices()
        if mine != theirs:
            return False
        return all(self[v].same_registers(other[v]) for v in mine)

    def placement_ok(self) -> bool:
        """Every vertex lives on the worker the partitioner assigns it to."""
        return all(self.partitioner(v) == s.worker for s in self.shards for v in s.sketches)

    def reshard(self, partitioner: Partitioner) -> DegreeSketch:
        out = DegreeSketch(self.params, partitioner, self.layer)
        for s in self.shards:
            for v, sk in s.sketches.items():
                out.shards[partitioner(v)].sketches[v] = sk.copy()
        return out

    def estimates(self) -> dict[int, float]:
        return {v: sk.estimate() for v, sk in self.items()}


def _shard_name(worker: int, workers: int, layer: int) -> str:
    return f"shard-{worker:04d}-of-{workers:04d}.t{layer}.dgsk"


def save_store(store: DegreeSketch, directory: str | Path, extra: dict | None = None) -> list[Path]:
    """Write one file per worker plus a ``config.json`` sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    P = store.partitioner.workers
    paths = []
    for s in store.shards:
        path = directory / _shard_name(s.worker, P, store.layer)
        path.write_bytes(s.to_bytes())
        paths.append(path)
    params = store.params
    config = {
        "p": params.p,
        "seed": params.seed,
        "beta_coeffs": list(params.beta_coeffs),
        "workers": P,
        "partitioner": store.partitioner.mode.value,
        "partitioner_seed": store.partitioner.seed,
        "layers": sorted({store.layer} | set(_existing_layers(directory))),
    }
    if extra:
        config["run"] = extra
    (directory / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    return paths


def _existing_layers(directory: Path) -> list[int]:
    cfg = directory / "config.json"
    if not cfg.exists():
        return []
    try:
        return list(json.loads(cfg.read_text()).get("layers", []))
    except (ValueError, OSError):
        return []


def load_store(directory: str | Path, layer: int = 1) -> DegreeSketch:
    directory = Path(directory)
    config = json.loads((directory / "config.json").read_text())
    params = HllParams(config["p"], config["seed"], tuple(config["beta_coeffs"]))
    part = Partitioner(config["workers"], PartitionMode(config["partitioner"]), config["partitioner_seed"])
    shards = []
    for w in range(part.workers):
        data = (directory / _shard_name(w, part.workers, layer)).read_bytes()
        shard = ShardStore.from_bytes(data, params, w)
        if shard.layer != layer:
            raise ValueError(f"shard {w} holds layer {shard.layer}, expected {layer}")
        shards.append(shard)
    out = DegreeSketch(params, part, layer, shards)
    if not out.placement_ok():
        raise ValueError("store shard contents disagree with the partitioner")
    return out


# ------------------------------------------------------------------- plumbing


def _substreams(stream: Any, P: int) -> list[np.ndarray]:
    """Accept an EdgeList, an (m, 2) array, or a list of P substreams."""
    from .graph import EdgeList, split_substreams

    if isinstance(stream, EdgeList):
        return split_substreams(stream.edges, P)
    if isinstance(stream, np.ndarray):
        return split_substreams(stream, P)
    parts = [np.asarray(s, dtype=np.uint64).reshape(-1, 2) for s in stream]
    if len(parts) != P:
        raise ValueError(f"expected {P} substreams, got {len(parts)}")
    return parts


def _cluster_for(partitioner: Partitioner, cluster: Cluster | None) -> Cluster:
    if cluster is None:
        return Cluster(partitioner)
    if cluster.partitioner != partitioner:
        raise ValueError("cluster partitioner differs from the store's")
    return cluster


# ---------------------------------------------------------------- accumulation


def accumulate(
    stream: Any,
    params: HllParams,
    partitioner: Partitioner | int = 1,
    *,
    dense_only: bool = False,
    cluster: Cluster | None = None,
) -> DegreeSketch:
    """One pass: every edge ``xy`` inserts ``y`` into D[x] and ``x`` into D[y]."""
    if isinstance(partitioner, int):
        partitioner = Partitioner(partitioner)
    cluster = _cluster_for(partitioner, cluster)
    P = partitioner.workers
    store = DegreeSketch(params, partitioner, 1)
    parts = _substreams(stream, P)
    EDGE = MessageTag.EDGE

    def work(part: np.ndarray) -> Callable[[WorkerContext], Iterator[None]]:
        def run(ctx: WorkerContext) -> Iterator[None]:
            owner = partitioner
            for x, y in part.tolist():
                ctx.send(owner(x), Message(EDGE, x, y))
                ctx.send(owner(y), Message(EDGE, y, x))
                yield
        return run

    def handle(ctx: WorkerContext, msg: Message) -> None:
        sketches = ctx.state.sketches
        sk = sketches.get(msg.x)
        if sk is None:
            sk = sketches[msg.x] = HllSketch(params, dense=dense_only)
        sk.insert(msg.y)

    cluster.run(handle, [work(p) for p in parts], store.shards)
    return store


# --------------------------------------------------------------- neighborhoods


@dataclass
class NeighborhoodResult:
    """Per-vertex and global neighborhood estimates for t = 1..k."""

    k: int
    per_vertex: list[dict[int, float]]
    totals: list[float]
    layers: list[DegreeSketch] = field(repr=False)

    def vertex(self, x: int) -> np.ndarray:
        return np.array([self.per_vertex[t][x] for t in range(self.k)])

    def total(self, t: int) -> float:
        return self.totals[t - 1]

    def estimates(self, t: int) -> dict[int, float]:
        return self.per_vertex[t - 1]


def _layer_estimates(store: DegreeSketch, cluster: Cluster) -> tuple[dict[int, float], float]:
    # Each worker estimates its own vertices and contributes an exact local sum.
    per_vertex: dict[int, float] = {}
    local = []
    for shard in store.shards:
        acc = ExactSum()
        for v, sk in shard.sketches.items():
            e = sk.estimate()
            per_vertex[v] = e
            acc.add(e)
        local.append(acc)
    return dict(sorted(per_vertex.items())), cluster.reduce_sum(local)


def estimate_neighborhoods(
    stream: Any,
    store: DegreeSketch,
    k: int,
    *,
    dense_only: bool = False,
    cluster: Cluster | None = None,
) -> NeighborhoodResult:
    """Estimate |N(x, t)| for t = 1..k by repeated neighbor-sketch unions.

    Layer 1 is ``store`` itself, so self-inclusion follows the sketches: at
    t = 1 a vertex counts only its neighbors, from t = 2 on it re-enters
    through them.
    """
    if k < 1:
        raise ValueError("hop count k must be >= 1")
    cluster = _cluster_for(store.partitioner, cluster)
    P = store.partitioner.workers
    parts = _substreams(stream, P)
    params = store.params
    layers = [store]
    est, total = _layer_estimates(store, cluster)
    per_vertex, totals = [est], [total]
    EDGE, SKETCH = MessageTag.EDGE, MessageTag.SKETCH

    for t in range(2, k + 1):
        prev = layers[-1]
        cur = prev.copy(layer=t, dense=dense_only)
        states = [(prev.shards[w].sketches, cur.shards[w].sketches, {}) for w in range(P)]

        def work(part: np.ndarray, t: int = t) -> Callable[[WorkerContext], Iterator[None]]:
            def run(ctx: WorkerContext) -> Iterator[None]:
                owner = store.partitioner
                for x, y in part.tolist():
                    ctx.send(owner(x), Message(EDGE, x, y, t))
                    ctx.send(owner(y), Message(EDGE, y, x, t))
                    yield
            return run

        def handle(ctx: WorkerContext, msg: Message) -> None:
            old, new, cache = ctx.state
            if msg.tag == EDGE:
                # Forward D^{t-1}[x] to the owner of y.
                data = cache.get(msg.x)
                if data is None:
                    data = cache[msg.x] = old[msg.x].to_bytes()
                ctx.send_to_owner(msg.y, Message(SKETCH, msg.x, msg.y, msg.t, data))
            elif msg.tag == SKETCH:
                new[msg.y].update(HllSketch.from_bytes(params, msg.sketch))
            else:
                raise AssertionError(f"unexpected message {msg.tag}")

        cluster.run(handle, [work(p) for p in parts], states)
        layers.append(cur)
        est, total = _layer_estimates(cur, cluster)
        per_vertex.append(est)
        totals.append(total)
    return NeighborhoodResult(k, per_vertex, totals, layers)


# ------------------------------------------------------------------- triangles


class DominationPolicy(str, enum.Enum):
    KEEP = "keep"
    DROP_STRICT = "strict"
    DROP_ALL = "all"


@dataclass
class TriangleResult:
    """Global triangle estimate, heavy-hitter heap and diagnostics."""

    total: float
    heap: TopKHeap
    table: dict[Hashable, float] | None = None
    diagnostics: dict[str, Any] = field(default_factory=dict)
    # Per-edge estimates, also kept by the vertex query when a table is requested.
    edge_table: dict[tuple[int, int], float] | None = None

    def top(self) -> list[tuple[float, Any]]:
        return self.heap.items()


def _estimator(method: str | Method) -> Callable[[HllSketch, HllSketch], IntersectionEstimate]:
    method = Method(method)
    return estimate_intersection_mle if method is Method.MLE else estimate_intersection_ie


def _score(est: IntersectionEstimate, policy: DominationPolicy) -> float:
    if policy is DominationPolicy.DROP_ALL and est.domination is not Domination.NONE:
        return 0.0
    if policy is DominationPolicy.DROP_STRICT and est.domination.strict:
        return 0.0
    return est.lambda_x


class _TriangleState:
    __slots__ = ("shard", "heap", "total", "table", "edges", "nonconverged", "dominations",
                 "dropped", "vertex_terms")

    def __init__(self, shard: ShardStore, k: int, keep_table: bool, vertex: bool) -> None:
        self.shard = shard
        self.heap = TopKHeap(k)
        self.total = ExactSum()
        self.table: dict | None = {} if keep_table else None
        self.edges = 0
        self.nonconverged = 0
        self.dominations: dict[str, int] = {}
        self.dropped = 0
        self.vertex_terms: dict[int, list[float]] | None = {} if vertex else None


def _triangle_pass(
    stream: Any,
    store: DegreeSketch,
    heap_k: int,
    estimator: str | Method,
    domination_policy: str | DominationPolicy,
    vertex_mode: bool,
    full_table: bool,
    cluster: Cluster | None,
) -> tuple[list[_TriangleState], Cluster]:
    if heap_k < 1:
        raise ValueError("heap capacity k must be >= 1")
    policy = DominationPolicy(domination_policy)
    est_fn = _estimator(estimator)
    cluster = _cluster_for(store.partitioner, cluster)
    P = store.partitioner.workers
    parts = _substreams(stream, P)
    params = store.params
    states = [_TriangleState(store.shards[w], heap_k, full_table, vertex_mode)
              for w in range(P)]
    EDGE, SKETCH, EST = MessageTag.EDGE, MessageTag.SKETCH, MessageTag.EST

    def work(part: np.ndarray) -> Callable[[WorkerContext], Iterator[None]]:
        def run(ctx: WorkerContext) -> Iterator[None]:
            owner = store.partitioner
            # Each stream edge goes to one endpoint only: one estimate per edge.
            for u, v in part.tolist():
                ctx.send(owner(u), Message(EDGE, u, v))
                yield
        return run

    def handle(ctx: WorkerContext, msg: Message) -> None:
        st: _TriangleState = ctx.state
        tag = msg.tag
        if tag == EDGE:
            data = st.shard.sketches[msg.x].to_bytes()
            ctx.send_to_owner(msg.y, Message(SKETCH, msg.x, msg.y, None, data))
        elif tag == SKETCH:
            u, v = msg.x, msg.y
            du = HllSketch.from_bytes(params, msg.sketch)
            est = est_fn(st.shard.sketches[v], du)
            val = _score(est, policy)
            st.edges += 1
            if not est.converged:
                st.nonconverged += 1
            if est.domination is not Domination.NONE:
                name = est.domination.value
                st.dominations[name] = st.dominations.get(name, 0) + 1
                if val == 0.0 and est.lambda_x != 0.0:
                    st.dropped += 1
            st.total.add(val)
            key = (u, v) if u < v else (v, u)
            if st.table is not None:
                st.table[key] = val
            if vertex_mode:
                st.vertex_terms.setdefault(v, []).append(val)
                ctx.send_to_owner(u, Message(EST, u, -1, None, None, val))
            else:
                st.heap.offer(val, key)
        elif tag == EST:
            st.vertex_terms.setdefault(msg.x, []).append(msg.value)
        else:
            raise AssertionError(f"unexpected message {tag}")

    cluster.run(handle, [work(p) for p in parts], states)
    return states, cluster


def _diagnostics(states: list[_TriangleState], m: int) -> dict[str, Any]:
    dom: dict[str, int] = {}
    for st in states:
        for name, n in st.dominations.items():
            dom[name] = dom.get(name, 0) + n
    edges = sum(st.edges for st in states)
    return {
        "edges_evaluated": edges,
        "stream_edges": m,
        "nonconverged": sum(st.nonconverged for st in states),
        "dominated": dict(sorted(dom.items())),
        "dropped": sum(st.dropped for st in states),
    }


def _edge_table(states: list[_TriangleState]) -> dict[tuple[int, int], float]:
    table: dict[tuple[int, int], float] = {}
    for st in states:
        table.update(st.table)
    return dict(sorted(table.items()))


def _stream_len(stream: Any, P: int) -> int:
    return sum(len(p) for p in _substreams(stream, P))


def edge_heavy_hitters(
    stream: Any,
    store: DegreeSketch,
    k: int,
    estimator: str | Method = Method.MLE,
    domination_policy: str | DominationPolicy = DominationPolicy.KEEP,
    *,
    full_table: bool = False,
    cluster: Cluster | None = None,
) -> TriangleResult:
    """Edge-local triangle estimates |N(u) n N(v)|, global count and top-``k`` edges.

    Heap ids are canonical ``(min, max)`` vertex pairs.
    """
    states, cluster = _triangle_pass(stream, store, k, estimator, domination_policy,
                                     False, full_table, cluster)
    diag = _diagnostics(states, _stream_len(stream, store.partitioner.workers))
    if diag["edges_evaluated"] != diag["stream_edges"]:
        raise AssertionError("routing audit failed: not one estimate per stream edge")
    # Each triangle is counted once at each of its three edges.
    total = cluster.reduce_sum([st.total for st in states]) / 3.0
    heap = cluster.reduce_topk([st.heap for st in states])
    table = _edge_table(states) if full_table else None
    return TriangleResult(total, heap, table, diag, table)


def vertex_heavy_hitters(
    stream: Any,
    store: DegreeSketch,
    k: int,
    estimator: str | Method = Method.MLE,
    domination_policy: str | DominationPolicy = DominationPolicy.KEEP,
    *,
    full_table: bool = False,
    cluster: Cluster | None = None,
) -> TriangleResult:
    """Vertex-local triangle estimates, half the sum over incident edges, and top-``k`` vertices."""
    states, cluster = _triangle_pass(stream, store, k, estimator, domination_policy,
                                     True, full_table, cluster)
    diag = _diagnostics(states, _stream_len(stream, store.partitioner.workers))
    if diag["edges_evaluated"] != diag["stream_edges"]:
        raise AssertionError("routing audit failed: not one estimate per stream edge")
    total = cluster.reduce_sum([st.total for st in states]) / 3.0
    table: dict[int, float] = {}
    for st in states:
        # Each triangle at x is seen through both of its edges incident on x.
        for x, terms in st.vertex_terms.items():
            val = 0.5 * math.fsum(terms)
            st.heap.offer(val, x)
            table[x] = val
    heap = cluster.reduce_topk([st.heap for st in states])
    if not full_table:
        return TriangleResult(total, heap, None, diag)
    return TriangleResult(total, heap, dict(sorted(table.items())), diag, _edge_table(states))
