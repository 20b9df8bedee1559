"""Finding the edges in the most triangles without counting any of them.

A Kronecker product of a small graph with itself has known per-edge triangle
counts, so the sketch-based heavy hitters can be scored exactly.
"""
from degreesketch.cli import precision_recall
from degreesketch.degreesketch import accumulate, edge_heavy_hitters, vertex_heavy_hitters
from degreesketch.graph import (
    KroneckerSpec,
    bundled_graph,
    edge_table_dict,
    kron_edge_triangle_table,
    kronecker_product,
    oracle_topk,
)
from degreesketch.hll import HllParams

factor = bundled_graph("plc30")
spec = KroneckerSpec(factor, factor)
g = kronecker_product(spec)
truth = edge_table_dict(*kron_edge_triangle_table(spec, g))
print(f"product graph: {g.n} vertices, {g.m} edges, {sum(truth.values()) // 3} triangles")

store = accumulate(g, HllParams(12), 4)
res = edge_heavy_hitters(g, store, 20)
print(f"estimated triangles: {res.total:.0f}")
print(f"domination diagnostics: {res.diagnostics['dominated']}")

print("\ntop edges   estimate   truth")
for score, e in res.top()[:10]:
    print(f"{str(e):12s}{score:8.1f}{truth[e]:8d}")

for heap_k in (10, 20):
    est = {e: s for s, e in res.top()[:heap_k]}
    pr = precision_recall(truth, est, k=10, heap_k=heap_k)
    print(f"k'={heap_k}: precision {pr['precision']:.2f}, recall {pr['recall']:.2f}")

# The vertex query reuses the same pass, halving the sum over incident edges.
vres = vertex_heavy_hitters(g, store, 5, estimator="inclusion_exclusion")
print("\ntop vertices (inclusion-exclusion):", [(v, round(s, 1)) for s, v in vres.top()])
vt = {}
for (u, v), c in truth.items():
    vt[u] = vt.get(u, 0) + c
    vt[v] = vt.get(v, 0) + c
print("true top vertices:                 ", [(v, c // 2) for v, c in oracle_topk(vt, 5)])
