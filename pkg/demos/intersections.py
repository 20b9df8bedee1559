"""Why the likelihood estimator beats inclusion-exclusion, and where both fail.

Two sketches of 10^5 elements each, with varying overlap. When one set is
tiny next to the other, the big sketch dominates the small one register by
register and no estimator can see the overlap.
"""
import numpy as np

from degreesketch.hll import HllParams, HllSketch
from degreesketch.intersect import (
    Domination,
    count_stats,
    detect_domination,
    estimate_intersection_ie,
    estimate_intersection_mle,
)


def sketch(params, xs):
    return HllSketch.from_elements(params, np.asarray(xs, dtype=np.uint64))


n = 10**5
a = np.arange(n)
print("overlap    MLE MRE    IE MRE")
for rel in (0.01, 0.05, 0.1, 0.5):
    x = int(rel * n)
    errs = []
    for seed in range(20):
        p = HllParams(12, seed)
        A, B = sketch(p, a), sketch(p, a + n - x)
        errs.append([abs(estimate_intersection_mle(A, B).lambda_x - x) / x,
                     abs(estimate_intersection_ie(A, B).lambda_x - x) / x])
    mle, ie = np.mean(errs, axis=0)
    print(f"{rel:7.2f} {mle:10.3f} {ie:9.3f}")

print("\n|B| beside |A| = 10^6    dominated (of 50)")
big = np.arange(10**6)
for nb in (10, 100, 1000, 10000):
    hits = 0
    for seed in range(50):
        p = HllParams(12, seed)
        b = np.concatenate([big[: nb // 10], 10**6 + np.arange(nb - nb // 10)])
        dom = detect_domination(count_stats(sketch(p, big), sketch(p, b)))
        hits += dom in (Domination.A_DOMINATES_B, Domination.A_STRICTLY_DOMINATES_B)
    print(f"{nb:22d} {hits:12d}")
