"""Edge streams, Kronecker test graphs and exact oracles.

Graphs are undirected and simple. An :class:`EdgeList` stores each edge once
as ``(u, v)`` with ``u < v``, deduplicated and sorted.

Kronecker products ``C = A1 (x) A2`` come with exact edge-local triangle
counts: since ``(A1 (x) A2)**2 = A1**2 (x) A2**2``, the number of common
neighbors of product vertices ``(i1, i2)`` and ``(j1, j2)`` is
``W1(i1, j1) * W2(i2, j2)``, where ``Wm`` counts common neighbors in factor m.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Hashable, Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

__all__ = [
    "EdgeList",
    "global_triangles",
    "KroneckerSpec",
    "ParseError",
    "bundled_graph",
    "bundled_graph_names",
    "edge_table_dict",
    "kron_edge_triangle_table",
    "kron_edge_triangles",
    "kronecker_product",
    "normalize",
    "oracle_degree",
    "oracle_edge_triangle_table",
    "oracle_edge_triangles",
    "oracle_neighborhood",
    "oracle_neighborhood_sizes",
    "oracle_topk",
    "oracle_vertex_triangle_table",
    "oracle_vertex_triangles",
    "parse_edge_stream",
    "split_substreams",
    "read_table_csv",
    "write_edge_stream",
    "write_table_csv",
]

DEFAULT_EDGE_CAP = 10**7


class ParseError(ValueError):
    pass


# -------------------------------------------------------------------- edge list


@dataclass(frozen=True, eq=False)
class EdgeList:
    """Normalized undirected simple graph.

    ``n`` is the size of the vertex space: the distinct endpoint count for
    parsed files, ``n1 * n2`` for Kronecker products.
    """

    n: int
    edges: np.ndarray
    note: str = ""

    @property
    def m(self) -> int:
        return len(self.edges)

    def __len__(self) -> int:
        return len(self.edges)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EdgeList):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.edges, other.edges)

    __hash__ = None  # type: ignore[assignment]

    def vertices(self) -> np.ndarray:
        return np.unique(self.edges)

    def adjacency(self) -> sparse.csr_matrix:
        """Symmetric 0/1 CSR matrix; ids must be below ``n``."""
        if self.m and int(self.edges.max()) >= self.n:
            raise ValueError("vertex ids exceed n; relabel first")
        u = self.edges[:, 0].astype(np.int64)
        v = self.edges[:, 1].astype(np.int64)
        data = np.ones(2 * self.m, dtype=np.int64)
        A = sparse.csr_matrix((data, (np.concatenate([u, v]), np.concatenate([v, u]))),
                              shape=(self.n, self.n))
        A.sort_indices()
        return A

    def neighbor_sets(self) -> dict[int, set[int]]:
        nbrs: dict[int, set[int]] = {}
        for u, v in self.edges.tolist():
            nbrs.setdefault(u, set()).add(v)
            nbrs.setdefault(v, set()).add(u)
        return nbrs

    def relabel(self) -> tuple[EdgeList, np.ndarray]:
        """Compact ids to ``0..k-1`` in increasing order; returns the old ids too."""
        ids = self.vertices()
        if self.m == 0:
            return EdgeList(0, self.edges.copy(), self.note), ids
        new = np.searchsorted(ids, self.edges).astype(np.uint64)
        return EdgeList(len(ids), new, self.note), ids

    def permuted(self, seed: int) -> np.ndarray:
        """The edge array in a seeded random stream order."""
        rng = np.random.default_rng(seed)
        return self.edges[rng.permutation(self.m)]


def normalize(edges: Any, n: int | None = None, note: str = "") -> EdgeList:
    """Drop self-loops and duplicates, orient ``u < v`` and sort."""
    if isinstance(edges, EdgeList):
        n = edges.n if n is None else n
        note = note or edges.note
        edges = edges.edges
    arr = np.asarray(edges, dtype=np.uint64).reshape(-1, 2)
    arr = arr[arr[:, 0] != arr[:, 1]]
    arr = np.sort(arr, axis=1)
    if len(arr):
        arr = np.unique(arr, axis=0)
    arr = np.ascontiguousarray(arr, dtype=np.uint64)
    if n is None:
        n = len(np.unique(arr))
    return EdgeList(int(n), arr, note)


def parse_edge_stream(path: str | Path, note: str | None = None) -> EdgeList:
    """Read a whitespace edge list; ``#`` lines and blank lines are skipped."""
    path = Path(path)
    pairs: list[tuple[int, int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) != 2:
                raise ParseError(f"{path}:{lineno}: expected 'u v', got {s!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer vertex id in {s!r}") from None
            if not (0 <= u < 2**64 and 0 <= v < 2**64):
                raise ParseError(f"{path}:{lineno}: vertex id out of unsigned 64-bit range")
            pairs.append((u, v))
    arr = np.array(pairs, dtype=np.uint64).reshape(-1, 2)
    return normalize(arr, note=note if note is not None else path.name)


def write_edge_stream(g: EdgeList, path: str | Path, header: Sequence[str] = ()) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write(f"# n={g.n} m={g.m}\n")
        buf = io.StringIO()
        np.savetxt(buf, g.edges, fmt="%d")
        fh.write(buf.getvalue())


def split_substreams(edges: Any, P: int) -> list[np.ndarray]:
    """Contiguous chunks with sizes differing by at most one, larger first."""
    if P < 1:
        raise ValueError("P must be >= 1")
    arr = edges.edges if isinstance(edges, EdgeList) else np.asarray(edges, dtype=np.uint64).reshape(-1, 2)
    base, extra = divmod(len(arr), P)
    out, start = [], 0
    for w in range(P):
        size = base + (1 if w < extra else 0)
        out.append(arr[start:start + size])
        start += size
    return out


def bundled_graph_names() -> list[str]:
    root = resources.files("degreesketch") / "data" / "graphs"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".txt"))


def bundled_graph(name: str) -> EdgeList:
    path = resources.files("degreesketch") / "data" / "graphs" / f"{name}.txt"
    with resources.as_file(path) as p:
        if not p.exists():
            raise FileNotFoundError(f"no bundled graph {name!r}; have {bundled_graph_names()}")
        return parse_edge_stream(p, note=name)


# ------------------------------------------------------------------- kronecker


@dataclass(frozen=True, eq=False)
class KroneckerSpec:
    """Factors of a Kronecker product; ids are compacted to ``0..n-1`` if needed."""

    g1: EdgeList
    g2: EdgeList
    edge_cap: int = DEFAULT_EDGE_CAP

    def __post_init__(self) -> None:
        for name in ("g1", "g2"):
            g = normalize(getattr(self, name))
            if g.m and int(g.edges.max()) >= g.n:
                g = g.relabel()[0]
            object.__setattr__(self, name, g)

    @property
    def n(self) -> int:
        return self.g1.n * self.g2.n

    @property
    def edge_count(self) -> int:
        return 2 * self.g1.m * self.g2.m

    def vertex(self, i1: int, i2: int) -> int:
        return i1 * self.g2.n + i2

    def split(self, v: int) -> tuple[int, int]:
        return divmod(int(v), self.g2.n)


def kronecker_product(spec: KroneckerSpec) -> EdgeList:
    """Product graph: ``(i1,i2) ~ (j1,j2)`` iff ``i1 ~ j1`` and ``i2 ~ j2``."""
    if spec.edge_count > spec.edge_cap:
        raise ValueError(f"product would have {spec.edge_count} edges, cap is {spec.edge_cap}")
    n2 = np.uint64(spec.g2.n)
    m1, m2 = spec.g1.m, spec.g2.m
    A = np.repeat(spec.g1.edges[:, 0], m2)
    B = np.repeat(spec.g1.edges[:, 1], m2)
    C = np.tile(spec.g2.edges[:, 0], m1)
    D = np.tile(spec.g2.edges[:, 1], m1)
    # Factor edge (a,b) with (c,d) yields (a,c)~(b,d) and (a,d)~(b,c).
    e1 = np.stack([A * n2 + C, B * n2 + D], axis=1)
    e2 = np.stack([A * n2 + D, B * n2 + C], axis=1)
    note = f"kron({spec.g1.note or 'g1'},{spec.g2.note or 'g2'})"
    return normalize(np.concatenate([e1, e2]), n=spec.n, note=note)


def _common_neighbor_lookup(g: EdgeList) -> sparse.csr_matrix:
    A = g.adjacency()
    W = (A @ A).tocsr()
    W.sort_indices()
    return W


def kron_edge_triangles(spec: KroneckerSpec, e: tuple[int, int]) -> int:
    """Exact triangle count of product edge ``e`` from factor common neighbors."""
    (i1, i2), (j1, j2) = spec.split(e[0]), spec.split(e[1])
    n1a, n2a = spec.g1.neighbor_sets(), spec.g2.neighbor_sets()
    if j1 not in n1a.get(i1, ()) or j2 not in n2a.get(i2, ()):
        raise ValueError(f"{e} is not an edge of the product")
    return len(n1a[i1] & n1a[j1]) * len(n2a[i2] & n2a[j2])


def kron_edge_triangle_table(spec: KroneckerSpec, product: EdgeList | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``(edges, counts)`` for every product edge, aligned with the product's edge order."""
    if product is None:
        product = kronecker_product(spec)
    W1 = _common_neighbor_lookup(spec.g1)
    W2 = _common_neighbor_lookup(spec.g2)
    n2 = np.uint64(spec.g2.n)
    u, v = product.edges[:, 0], product.edges[:, 1]
    i1, i2 = (u // n2).astype(np.int64), (u % n2).astype(np.int64)
    j1, j2 = (v // n2).astype(np.int64), (v % n2).astype(np.int64)
    w1 = np.asarray(W1[i1, j1]).ravel()
    w2 = np.asarray(W2[i2, j2]).ravel()
    return product.edges, (w1 * w2).astype(np.int64)


# --------------------------------------------------------------------- oracles


def _check_vertex(g: EdgeList, x: int) -> None:
    # Parsed files may use sparse ids, so the largest id also bounds the range.
    bound = max(g.n, int(g.edges.max()) + 1 if g.m else 0)
    if not 0 <= x < bound:
        raise ValueError(f"vertex {x} out of range [0, {bound})")


def oracle_degree(g: EdgeList, x: int) -> int:
    _check_vertex(g, x)
    e = g.edges
    return int(np.count_nonzero(e[:, 0] == x) + np.count_nonzero(e[:, 1] == x))


_SELF_MODES = ("walk", "exclude", "include")


def oracle_neighborhood(g: EdgeList, x: int, t: int, self_mode: str = "walk") -> int:
    """Vertices within ``t`` hops of ``x`` by breadth-first search.

    ``self_mode`` decides whether ``x`` itself counts: ``exclude`` never,
    ``include`` always, ``walk`` when a closed walk of length <= t exists
    (t >= 2 and x has a neighbor), which is the content of the layered
    sketches built from neighbor sets.
    """
    _check_vertex(g, x)
    if self_mode not in _SELF_MODES:
        raise ValueError(f"self_mode must be one of {_SELF_MODES}")
    nbrs = g.neighbor_sets()
    seen = {x}
    frontier = [x]
    for _ in range(t):
        nxt = []
        for u in frontier:
            for w in nbrs.get(u, ()):
                if w not in seen:
                    seen.add(w)
                    nxt.append(w)
        frontier = nxt
    count = len(seen) - 1
    if self_mode == "include" or (self_mode == "walk" and t >= 2 and x in nbrs):
        count += 1
    return count


def oracle_neighborhood_sizes(g: EdgeList, t_max: int, self_mode: str = "walk",
                              chunk: int = 512) -> np.ndarray:
    """``sizes[x, t-1]`` for every vertex and t = 1..t_max (chunked BFS)."""
    if self_mode not in _SELF_MODES:
        raise ValueError(f"self_mode must be one of {_SELF_MODES}")
    A = g.adjacency()
    n = g.n
    out = np.zeros((n, t_max), dtype=np.int64)
    ts = np.arange(1, t_max + 1)
    for start in range(0, n, chunk):
        idx = np.arange(start, min(n, start + chunk))
        dist = csgraph.shortest_path(A, unweighted=True, directed=False, indices=idx)
        dist[np.arange(len(idx)), idx] = np.inf
        for j, t in enumerate(ts):
            out[idx, j] = np.count_nonzero(dist <= t, axis=1)
    deg = np.diff(A.indptr)
    if self_mode == "include":
        out += 1
    elif self_mode == "walk" and t_max >= 2:
        out[:, 1:] += (deg > 0)[:, None]
    return out


def oracle_edge_triangles(g: EdgeList, xy: tuple[int, int], nbrs: Mapping[int, set] | None = None) -> int:
    """|N(x) n N(y)| for an edge ``xy``."""
    x, y = xy
    _check_vertex(g, x)
    _check_vertex(g, y)
    nbrs = g.neighbor_sets() if nbrs is None else nbrs
    if y not in nbrs.get(x, ()):
        raise ValueError(f"{xy} is not an edge")
    return len(nbrs[x] & nbrs[y])


def oracle_vertex_triangles(g: EdgeList, x: int, nbrs: Mapping[int, set] | None = None) -> int:
    """Number of edges among the neighbors of ``x``."""
    _check_vertex(g, x)
    nbrs = g.neighbor_sets() if nbrs is None else nbrs
    mine = sorted(nbrs.get(x, ()))
    return sum(1 for i, y in enumerate(mine) for z in mine[i + 1:] if z in nbrs[y])


def oracle_edge_triangle_table(g: EdgeList) -> np.ndarray:
    """Common-neighbor counts aligned with ``g.edges``."""
    if g.m == 0:
        return np.zeros(0, dtype=np.int64)
    A = g.adjacency()
    u = g.edges[:, 0].astype(np.int64)
    v = g.edges[:, 1].astype(np.int64)
    # Row u of A @ A restricted to column v, computed edge-wise.
    A2 = (A @ A).tocsr()
    return np.asarray(A2[u, v]).ravel().astype(np.int64)


def oracle_vertex_triangle_table(g: EdgeList, edge_table: np.ndarray | None = None) -> np.ndarray:
    """Per-vertex triangle counts; checks the half-sum identity against the edge table."""
    A = g.adjacency()
    direct = np.asarray((A @ A).multiply(A).sum(axis=1)).ravel()
    if np.any(direct % 2):
        raise AssertionError("odd closed-walk count on a simple graph")
    direct //= 2
    if edge_table is None:
        edge_table = oracle_edge_triangle_table(g)
    half = np.zeros(g.n, dtype=np.int64)
    np.add.at(half, g.edges[:, 0].astype(np.int64), edge_table)
    np.add.at(half, g.edges[:, 1].astype(np.int64), edge_table)
    if np.any(half % 2) or not np.array_equal(half // 2, direct):
        raise AssertionError("vertex counts disagree with half the incident edge counts")
    return direct.astype(np.int64)


def global_triangles(edge_table: np.ndarray, vertex_table: np.ndarray | None = None) -> int:
    """Total triangles: a third of the edge sum, checked against the vertex sum."""
    s = int(np.sum(edge_table))
    if s % 3:
        raise AssertionError("edge triangle sum not divisible by 3")
    if vertex_table is not None and int(np.sum(vertex_table)) != s:
        raise AssertionError("vertex triangle sum differs from edge triangle sum")
    return s // 3


def oracle_topk(table: Mapping[Hashable, float] | Iterable[tuple[Any, float]], k: int) -> list[tuple[Any, float]]:
    """Top ``k`` (id, score) pairs under (score desc, id asc)."""
    items = table.items() if isinstance(table, Mapping) else table
    return sorted(items, key=lambda kv: (-kv[1], kv[0]))[:k]


def edge_table_dict(edges: np.ndarray, counts: np.ndarray) -> dict[tuple[int, int], int]:
    return {(u, v): c for (u, v), c in zip(edges.tolist(), counts.tolist())}


# ------------------------------------------------------------------------- csv


def write_table_csv(path: str | Path, rows: Iterable[Sequence[Any]], header: Sequence[str],
                    comments: Sequence[str] = ()) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def read_table_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows:
        raise ParseError(f"{path}: empty table")
    return rows[0], rows[1:]
