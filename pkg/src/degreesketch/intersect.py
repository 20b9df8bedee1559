"""Intersection cardinality estimation between two HyperLogLog sketches.

Two estimators are provided. The inclusion-exclusion estimator combines three
cardinality estimates, ``|A| + |B| - |A u B|``. The maximum-likelihood
estimator fits a Poisson model in which ``A \\ B``, ``B \\ A`` and ``A n B``
have independent rates ``lambda_a``, ``lambda_b`` and ``lambda_x``.

Under that model, for register ``i`` and ranks ``k, l``,

    P(rA_i <= k, rB_i <= l) = exp(-(lambda_a tau(k) + lambda_b tau(l)
                                    + lambda_x tau(min(k, l))) / r)

with ``tau(k) = 2**-k`` for ``k <= q`` and ``tau(q + 1) = 0``. Differencing
the joint CDF gives per-register probabilities that depend only on the five
register-comparison histograms in :class:`CountStats`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .hll import HllParams, HllSketch, estimate_histogram

__all__ = [
    "CountStats",
    "Domination",
    "IntersectionEstimate",
    "count_stats",
    "detect_domination",
    "estimate_intersection",
    "estimate_intersection_ie",
    "estimate_intersection_mle",
    "log_likelihood",
]

MLE_MAX_ITER = 200
MLE_RTOL = 1e-4
# Rates below this (in elements) are treated as zero.
LAMBDA_FLOOR = 1e-3


class Domination(enum.Enum):
    NONE = "none"
    A_DOMINATES_B = "a_dominates_b"
    A_STRICTLY_DOMINATES_B = "a_strictly_dominates_b"
    B_DOMINATES_A = "b_dominates_a"
    B_STRICTLY_DOMINATES_A = "b_strictly_dominates_a"

    @property
    def strict(self) -> bool:
        return self in (Domination.A_STRICTLY_DOMINATES_B, Domination.B_STRICTLY_DOMINATES_A)


class Method(str, enum.Enum):
    INCLUSION_EXCLUSION = "inclusion_exclusion"
    MLE = "mle"


@dataclass(frozen=True)
class CountStats:
    """Histograms (indexed by register value 0..q+1) of register comparisons.

    ``a_less[k]`` counts registers with ``rA = k < rB``; ``a_greater[k]``
    counts ``rA = k > rB``; the ``b_*`` vectors are the mirror images and
    ``equal[k]`` counts ``rA = rB = k``.
    """

    a_less: np.ndarray
    a_greater: np.ndarray
    b_less: np.ndarray
    b_greater: np.ndarray
    equal: np.ndarray
    q: int
    r: int

    def swapped(self) -> CountStats:
        return CountStats(self.b_less, self.b_greater, self.a_less, self.a_greater,
                          self.equal, self.q, self.r)


def count_stats(a: HllSketch, b: HllSketch) -> CountStats:
    a.params.check_compatible(b.params)
    q, r = a.params.q, a.params.r
    size = q + 2
    # Joint histogram J[k, l] of register pairs; the five vectors are its
    # off-diagonal row and column sums and its diagonal.
    pair = a.registers().astype(np.intp) * size + b.registers()
    J = np.bincount(pair, minlength=size * size).reshape(size, size)
    upper = np.triu(J, 1)
    lower = np.tril(J, -1)
    return CountStats(
        a_less=upper.sum(axis=1),
        a_greater=lower.sum(axis=1),
        b_less=lower.sum(axis=0),
        b_greater=upper.sum(axis=0),
        equal=np.diagonal(J).copy(),
        q=q,
        r=r,
    )


def detect_domination(stats: CountStats) -> Domination:
    """Classify register-wise domination between the two sketches.

    ``a`` dominates ``b`` when every register of ``a`` is at least the matching
    register of ``b``; the domination is strict when in addition no nonzero
    register values coincide. Identical sketches report ``A_DOMINATES_B``.
    """
    a_never_below = not stats.a_less.any() and not stats.b_greater.any()
    b_never_below = not stats.b_less.any() and not stats.a_greater.any()
    no_nonzero_ties = not stats.equal[1:].any()
    if a_never_below:
        # Equal sketches (b_never_below as well) fall through to plain domination.
        if no_nonzero_ties and not b_never_below:
            return Domination.A_STRICTLY_DOMINATES_B
        return Domination.A_DOMINATES_B
    if b_never_below:
        if no_nonzero_ties:
            return Domination.B_STRICTLY_DOMINATES_A
        return Domination.B_DOMINATES_A
    return Domination.NONE


@dataclass(frozen=True)
class IntersectionEstimate:
    lambda_a: float
    lambda_b: float
    lambda_x: float
    method: Method
    domination: Domination
    converged: bool = True
    iterations: int = 0
    # Inclusion-exclusion values before clamping at zero: (a, b, x).
    raw: tuple[float, float, float] | None = field(default=None, compare=False)

    @property
    def swapped(self) -> IntersectionEstimate:
        dom = {
            Domination.A_DOMINATES_B: Domination.B_DOMINATES_A,
            Domination.B_DOMINATES_A: Domination.A_DOMINATES_B,
            Domination.A_STRICTLY_DOMINATES_B: Domination.B_STRICTLY_DOMINATES_A,
            Domination.B_STRICTLY_DOMINATES_A: Domination.A_STRICTLY_DOMINATES_B,
        }.get(self.domination, self.domination)
        raw = None if self.raw is None else (self.raw[1], self.raw[0], self.raw[2])
        return IntersectionEstimate(self.lambda_b, self.lambda_a, self.lambda_x, self.method,
                                    dom, self.converged, self.iterations, raw)


def _ie_values(params: HllParams, stats: CountStats) -> tuple[float, float, float]:
    # Register histograms of A, B and their union follow from the comparison counts.
    ea = estimate_histogram(params, stats.a_less + stats.a_greater + stats.equal)
    eb = estimate_histogram(params, stats.b_less + stats.b_greater + stats.equal)
    eu = estimate_histogram(params, stats.a_greater + stats.b_greater + stats.equal)
    return eu - eb, eu - ea, ea + eb - eu


def estimate_intersection_ie(
    a: HllSketch, b: HllSketch, stats: CountStats | None = None
) -> IntersectionEstimate:
    """Inclusion-exclusion: ``|A n B| ~ E(A) + E(B) - E(A u B)``, clamped at 0."""
    a.params.check_compatible(b.params)
    if stats is None:
        stats = count_stats(a, b)
    raw = _ie_values(a.params, stats)
    la, lb, lx = (max(0.0, v) for v in raw)
    return IntersectionEstimate(la, lb, lx, Method.INCLUSION_EXCLUSION,
                                detect_domination(stats), True, 0, raw)


# ------------------------------------------------------------- likelihood


class _Terms:
    """Nonzero likelihood cells of a CountStats, with per-cell constants.

    Rates are expressed per register (lambda / r). Every cell contributes a
    term linear in the rates, ``-tau(k)`` times its combined rate; these are
    folded into ``self.lin``. Cells with k > 0 add a log term through
    ``d = tau(k - 1) - tau(k)``; cells with k = 0 have no such term.
    """

    def __init__(self, stats: CountStats) -> None:
        q, r = stats.q, stats.r
        ks = np.arange(q + 2)
        tau = np.ldexp(1.0, -ks)
        tau[q + 1] = 0.0
        d = np.concatenate(([np.inf], tau[:-1] - tau[1:]))
        self.r = r

        # Each one-sided cell involves a single combined rate m . (a, b, x).
        combos = (
            (stats.a_less, (1.0, 0.0, 1.0)),
            (stats.a_greater, (1.0, 0.0, 0.0)),
            (stats.b_less, (0.0, 1.0, 1.0)),
            (stats.b_greater, (0.0, 1.0, 0.0)),
        )
        lin = np.zeros(3)
        cs, ds, ms = [], [], []
        for counts, m in combos:
            counts = counts.astype(np.float64)
            lin += (counts @ tau) * np.asarray(m)
            nz = np.flatnonzero(counts[1:]) + 1
            cs.append(counts[nz])
            ds.append(d[nz])
            ms.append(np.tile(m, (nz.size, 1)))
        self.g_c = np.concatenate(cs)
        self.g_d = np.concatenate(ds)
        self.g_m = np.concatenate(ms)

        equal = stats.equal.astype(np.float64)
        lin += equal @ tau
        nz = np.flatnonzero(equal[1:]) + 1
        self.e_c = equal[nz]
        self.e_d = d[nz]
        self.lin = lin

    def evaluate(self, lam: np.ndarray, order: int = 2):
        """Log-likelihood and (optionally) gradient/Hessian in per-register rates."""
        # One-sided cells: log(1 - exp(-mu d)), with mu d > 0.
        mu = self.g_m @ lam
        z = mu * self.g_d
        one_m = -np.expm1(-z)
        ll = self.g_c @ np.log(one_m) - self.lin @ lam

        # Equal cells: log(Ex + Fx Ea Eb) with E = 1 - F, F = exp(-lambda d).
        D = np.outer(lam, self.e_d)
        F = np.exp(-D)
        E = -np.expm1(-D)
        Ea, Eb, Ex = E
        Fa, Fb, Fx = F
        EaEb = Ea * Eb
        phi = Ex + Fx * EaEb
        ll += self.e_c @ np.log(phi)
        if order == 0:
            return ll

        em = np.exp(-z)
        d1 = self.g_d * em / one_m
        d2 = -self.g_d * d1 / one_m
        grad = self.g_m.T @ (self.g_c * d1) - self.lin
        hess = (self.g_m * (self.g_c * d2)[:, None]).T @ self.g_m

        # E' = d F and E'' = -d^2 F; note d Fx / dx = -Dx.
        Da, Db, Dx = self.e_d * F
        dd = self.e_d
        pa = Fx * Da * Eb
        pb = Fx * Ea * Db
        px = Dx * (1.0 - EaEb)
        gp = np.array([pa, pb, px])
        hp = np.array([
            [-dd * pa, Fx * Da * Db, -Dx * Da * Eb],
            [Fx * Da * Db, -dd * pb, -Dx * Ea * Db],
            [-Dx * Da * Eb, -Dx * Ea * Db, -dd * px],
        ])
        w = self.e_c / phi
        grad = grad + gp @ w
        hess = hess + hp @ w - (gp * (w / phi)) @ gp.T
        return ll, grad, hess


def log_likelihood(stats: CountStats, lambda_a: float, lambda_b: float, lambda_x: float) -> float:
    """Poisson log-likelihood of the register pairs (rates in elements)."""
    terms = _Terms(stats)
    lam = np.array([lambda_a, lambda_b, lambda_x], dtype=np.float64) / stats.r
    return float(terms.evaluate(lam, order=0))


def _maximize(terms: _Terms, init: np.ndarray) -> tuple[np.ndarray, bool, int]:
    """Damped Newton ascent in log-rate space with a lower floor on every rate."""
    r = terms.r
    floor = np.log(LAMBDA_FLOOR / r)
    theta = np.log(np.maximum(init, 0.5) / r)
    lam = np.exp(theta)
    ll, g, H = terms.evaluate(lam)
    for it in range(1, MLE_MAX_ITER + 1):
        gt = lam * g
        Ht = lam[:, None] * H * lam[None, :] + np.diag(gt)
        at_floor = theta <= floor + 1e-12
        active = ~(at_floor & (gt <= 0))
        step = np.zeros(3)
        if active.any():
            idx = np.flatnonzero(active)
            Ha = -Ht[np.ix_(idx, idx)]
            ga = gt[idx]
            try:
                np.linalg.cholesky(Ha)
                sol = np.linalg.solve(Ha, ga)
            except np.linalg.LinAlgError:
                shift = max(0.0, -np.linalg.eigvalsh(Ha).min()) + 1e-6 * (1.0 + np.abs(ga).max())
                sol = np.linalg.solve(Ha + shift * np.eye(idx.size), ga)
            step[idx] = sol
        big = np.abs(step).max()
        if big > 3.0:
            step *= 3.0 / big
        t = 1.0
        accepted = False
        for _ in range(40):
            cand = np.maximum(theta + t * step, floor)
            lam_c = np.exp(cand)
            # Full steps are usually accepted, so derivatives are computed up front.
            out = terms.evaluate(lam_c, order=2 if t == 1.0 else 0)
            ll_c = out[0] if t == 1.0 else out
            if ll_c >= ll - 1e-12 * abs(ll):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            return lam, False, it
        delta = np.abs(cand - theta)
        theta, lam = cand, lam_c
        ll, g, H = out if t == 1.0 else terms.evaluate(lam)
        if delta.max() < MLE_RTOL:
            return lam, True, it
    return lam, False, MLE_MAX_ITER


def estimate_intersection_mle(
    a: HllSketch, b: HllSketch, stats: CountStats | None = None
) -> IntersectionEstimate:
    """Maximum-likelihood estimate of ``|A \\ B|``, ``|B \\ A|`` and ``|A n B|``.

    Initialized from the clamped inclusion-exclusion values. Under strict
    domination the likelihood is flat in ``lambda_x``; the optimizer's value is
    returned but ``converged`` is reported as False.
    """
    a.params.check_compatible(b.params)
    if stats is None:
        stats = count_stats(a, b)
    dom = detect_domination(stats)
    raw = _ie_values(a.params, stats)
    init = np.array([max(0.0, v) for v in raw])
    terms = _Terms(stats)
    lam, converged, iters = _maximize(terms, init)
    out = lam * stats.r
    out = np.where(out <= LAMBDA_FLOOR * (1 + 1e-9), 0.0, out)
    if dom.strict:
        converged = False
    return IntersectionEstimate(float(out[0]), float(out[1]), float(out[2]), Method.MLE,
                                dom, converged, iters, raw)


def estimate_intersection(a: HllSketch, b: HllSketch, method: str | Method = Method.MLE) -> IntersectionEstimate:
    method = Method(method) if not isinstance(method, Method) else method
    if method is Method.MLE:
        return estimate_intersection_mle(a, b)
    return estimate_intersection_ie(a, b)
