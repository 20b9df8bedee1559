"""Reference implementations used only by the tests.

Everything here is written from the definitions, with plain Python integers
and loops, and shares no code with the package beyond the published choice
of hash function.
"""

from __future__ import annotations

import math
from collections import deque
from itertools import combinations

import numpy as np

M64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
C1 = 0xBF58476D1CE4E5B9
C2 = 0x94D049BB133111EB


# ------------------------------------------------------------------- hashing


def ref_finalize(z: int) -> int:
    z = (z ^ (z >> 30)) * C1 % 2**64
    z = (z ^ (z >> 27)) * C2 % 2**64
    return z ^ (z >> 31)


def ref_key(seed: int) -> int:
    return ref_finalize((seed * GOLDEN + 1) % 2**64)


def ref_hash(x: int, seed: int) -> int:
    return ref_finalize((x * GOLDEN + ref_key(seed)) % 2**64)


def _unxorshift(y: int, s: int) -> int:
    x = y
    for _ in range(64 // s + 1):
        x = y ^ (x >> s)
    return x


def ref_unhash(w: int, seed: int) -> int:
    """The element whose hash is ``w`` (the hash is a bijection)."""
    z = _unxorshift(w, 31)
    z = z * pow(C2, -1, 2**64) % 2**64
    z = _unxorshift(z, 27)
    z = z * pow(C1, -1, 2**64) % 2**64
    z = _unxorshift(z, 30)
    return (z - ref_key(seed)) * pow(GOLDEN, -1, 2**64) % 2**64


def ref_split(x: int, p: int, seed: int) -> tuple[int, int]:
    """Bucket from the top p bits, rank from the bit string of the rest."""
    bits = format(ref_hash(x, seed), "064b")
    q = 64 - p
    bucket = int(bits[:p], 2)
    suffix = bits[p:]
    lead = len(suffix) - len(suffix.lstrip("0"))
    return bucket, min(lead, q) + 1


def ref_registers(elements, p: int, seed: int) -> list[int]:
    regs = [0] * (1 << p)
    for x in elements:
        j, rank = ref_split(int(x), p, seed)
        regs[j] = max(regs[j], rank)
    return regs


def ref_estimate(regs: list[int], alpha: float, coeffs) -> float:
    """LogLogBeta estimate written out term by term."""
    r = len(regs)
    z = regs.count(0)
    if z == r:
        return 0.0
    lz = math.log(z + 1)
    beta = coeffs[0] * z + sum(coeffs[i] * lz**i for i in range(1, 8))
    return alpha * r * (r - z) / (beta + sum(2.0**-v for v in regs))


def ref_alpha(r: int) -> float:
    """alpha_r via mpmath quadrature of the defining integral."""
    import mpmath

    mpmath.mp.dps = 30
    f = lambda u: mpmath.log((2 + u) / (1 + u), 2) ** r
    return float(1 / (r * mpmath.quad(f, [0, 1.0 / r, 10.0 / r, 1, mpmath.inf])))


# -------------------------------------------------------------- intersection


def ref_count_stats(ra: list[int], rb: list[int], q: int) -> dict[str, list[int]]:
    out = {k: [0] * (q + 2) for k in ("a_less", "a_greater", "b_less", "b_greater", "equal")}
    for x, y in zip(ra, rb):
        if x < y:
            out["a_less"][x] += 1
            out["b_greater"][y] += 1
        elif x > y:
            out["a_greater"][x] += 1
            out["b_less"][y] += 1
        else:
            out["equal"][x] += 1
    return out


def ref_log_likelihood(ra: list[int], rb: list[int], q: int, la: float, lb: float, lx: float) -> float:
    """Sum over registers of log P(rA_i = k, rB_i = l) by differencing the joint CDF."""
    r = len(ra)

    def tau(k: int) -> float:
        if k < 0:
            return math.inf
        return 0.0 if k > q else 2.0**-k

    def cdf(k: int, l: int) -> float:
        if k < 0 or l < 0:
            return 0.0
        return math.exp(-(la * tau(k) + lb * tau(l) + lx * tau(min(k, l))) / r)

    total = 0.0
    for k, l in zip(ra, rb):
        pr = cdf(k, l) - cdf(k - 1, l) - cdf(k, l - 1) + cdf(k - 1, l - 1)
        total += math.log(pr) if pr > 0 else -math.inf
    return total


def ref_domination_probability(n_a: int, n_b_only: int, p: int) -> float:
    """P(all registers of A >= those of B) in the Poisson model.

    ``n_a`` elements (all of A, shared ones included) and ``n_b_only``
    elements of B outside A; B's shared elements can never exceed A.
    """
    r = 1 << p
    q = 64 - p
    m = np.arange(0, q + 2)
    tau = np.where(m <= q, 2.0 ** -m.astype(float), 0.0)
    cdf_a = np.exp(-n_a / r * tau)
    pmf_a = np.diff(np.concatenate([[0.0], cdf_a]))
    per_register = pmf_a @ np.exp(-n_b_only / r * tau)
    return float(per_register**r)


# --------------------------------------------------------------------- graphs


def adjacency_sets(edges) -> dict[int, set[int]]:
    adj: dict[int, set[int]] = {}
    for u, v in edges:
        u, v = int(u), int(v)
        if u == v:
            continue
        adj.setdefault(u, set()).add(v)
        adj.setdefault(v, set()).add(u)
    return adj


def ref_walk_set(adj: dict[int, set[int]], x: int, t: int) -> set[int]:
    """Vertices reachable from ``x`` by a walk of length 1..t."""
    frontier = {x}
    reached: set[int] = set()
    for _ in range(t):
        frontier = {w for u in frontier for w in adj.get(u, ())}
        reached |= frontier
    return reached


def ref_ball(adj: dict[int, set[int]], x: int, t: int) -> int:
    """BFS ball size excluding ``x``."""
    dist = {x: 0}
    dq = deque([x])
    while dq:
        u = dq.popleft()
        if dist[u] == t:
            continue
        for w in adj.get(u, ()):
            if w not in dist:
                dist[w] = dist[u] + 1
                dq.append(w)
    return len(dist) - 1


def ref_edge_triangles(adj: dict[int, set[int]]) -> dict[tuple[int, int], int]:
    out = {}
    for u in adj:
        for v in adj[u]:
            if u < v:
                out[(u, v)] = sum(1 for w in adj[u] if w in adj[v])
    return out


def ref_vertex_triangles(adj: dict[int, set[int]]) -> dict[int, int]:
    return {x: sum(1 for y, z in combinations(sorted(adj[x]), 2) if z in adj[y]) for x in adj}


def ref_kron_edges(e1, n1: int, e2, n2: int) -> set[tuple[int, int]]:
    """Product edges from the dense Kronecker product of adjacency matrices."""
    A1 = np.zeros((n1, n1), dtype=np.int64)
    A2 = np.zeros((n2, n2), dtype=np.int64)
    for u, v in e1:
        A1[u, v] = A1[v, u] = 1
    for u, v in e2:
        A2[u, v] = A2[v, u] = 1
    C = np.kron(A1, A2)
    np.fill_diagonal(C, 0)
    us, vs = np.nonzero(np.triu(C))
    return set(zip(us.tolist(), vs.tolist()))


def ref_topk(table: dict, k: int) -> list:
    ranked = sorted(table, key=lambda i: (-table[i], i))
    return ranked[:k]
