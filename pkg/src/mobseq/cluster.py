"""Weighted k-medoid (PAM) clustering on a precomputed dissimilarity matrix.

BUILD greedily seeds k medoids minimizing weighted assignment cost; SWAP
repeatedly applies the single best (medoid, non-medoid) exchange while the
total cost strictly decreases, followed by a medoid re-centering step. Small
instances restart from every possible BUILD seed, which empirically removes
single-swap local optima. All ties break on the lowest index, so runs are
reproducible. ``select_k`` sweeps k and keeps the clustering with the
highest weighted average silhouette width.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataValidationError


@dataclass
class Clustering:
    k: int
    medoid_indices: list[int]
    assignment: np.ndarray
    total_cost: float
    asw: float | None = None
    swap_trace: list[float] = field(default_factory=list)
    degenerate: bool = False

    def members(self, medoid: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == medoid)


def _assign(D: np.ndarray, medoids: list[int]) -> np.ndarray:
    """Nearest-medoid assignment; ties go to the lowest medoid index."""
    med = sorted(medoids)
    sub = D[:, med]
    best = np.argmin(sub, axis=1)  # argmin returns the first minimum
    return np.asarray(med, dtype=np.int64)[best]


def _cost(D: np.ndarray, w: np.ndarray, medoids: list[int]) -> float:
    med = sorted(medoids)
    return float(w @ D[:, med].min(axis=1))


# Below this size, every item is tried as the BUILD seed; single-swap local
# optima essentially vanish at desk scale for the cost of n cheap restarts.
# Larger instances fall back to the greedy and farthest-first starts only.
EXHAUSTIVE_SEED_LIMIT = 12


def _greedy_build(D: np.ndarray, w: np.ndarray, k: int, first: int) -> list[int]:
    """Greedy BUILD from a fixed first medoid: each addition minimizes cost."""
    n = D.shape[0]
    medoids = [first]
    nearest = D[:, first].copy()
    while len(medoids) < k:
        best_c, best_cost = -1, np.inf
        for c in range(n):
            if c in medoids:
                continue
            new_cost = float(w @ np.minimum(nearest, D[:, c]))
            if new_cost < best_cost - 1e-15:
                best_c, best_cost = c, new_cost
        medoids.append(best_c)
        nearest = np.minimum(nearest, D[:, best_c])
    return medoids


def _swap_descend(D, w, medoids, trace):
    """SWAP plus medoid-update descent from a start; mutates and returns medoids.

    SWAP takes the single best (medoid, non-medoid) exchange per pass while
    the cost strictly decreases; candidate costs for one removed medoid
    vectorize to a single matmul. The update step then re-centers each
    cluster on its weighted within-cluster minimizer (lowest index on ties),
    feeding back into SWAP on strict improvement; cost-neutral updates only
    canonicalize tied medoids, iterated to a cycle-safe fixed point.
    """
    n = D.shape[0]
    while True:
        while True:
            best_pair, best_cost = None, trace[-1]
            med_sorted = sorted(medoids)
            non_medoids = np.array([h for h in range(n) if h not in medoids], dtype=np.int64)
            if non_medoids.size == 0:
                break
            for m in med_sorted:
                others = [x for x in med_sorted if x != m]
                base = D[:, others].min(axis=1) if others else np.full(n, np.inf)
                cand_costs = w @ np.minimum(base[:, None], D[:, non_medoids])
                idx = int(np.argmin(cand_costs))
                if cand_costs[idx] < best_cost - 1e-12:
                    best_pair, best_cost = (m, int(non_medoids[idx])), float(cand_costs[idx])
            if best_pair is None:
                break
            medoids.remove(best_pair[0])
            medoids.append(best_pair[1])
            trace.append(best_cost)
            if len(trace) > 10_000:
                raise DataValidationError("PAM swap failed to converge")

        improved = False
        seen = {tuple(sorted(medoids))}
        for _ in range(100):
            assignment = _assign(D, medoids)
            updated = []
            for m in sorted(medoids):
                members = np.flatnonzero(assignment == m)
                sums = D[np.ix_(members, members)] @ w[members]
                updated.append(int(members[int(np.argmin(sums))]))
            if sorted(updated) == sorted(medoids):
                break
            new_cost = _cost(D, w, updated)
            if new_cost < trace[-1] - 1e-12:
                medoids = list(updated)
                trace.append(new_cost)
                improved = True
                break
            key = tuple(sorted(updated))
            if key in seen:
                medoids = sorted(min(seen | {key}))  # deterministic cycle exit
                break
            seen.add(key)
            medoids = list(updated)
        if not improved:
            return medoids


def _farthest_first(D: np.ndarray, w: np.ndarray, k: int) -> list[int]:
    chosen = [int(np.argmin(D.T @ w))]
    while len(chosen) < k:
        dmin = D[:, chosen].min(axis=1)
        dmin[chosen] = -1.0
        chosen.append(int(np.argmax(dmin * w)))
    return chosen


def pam_cluster(D: np.ndarray, w: np.ndarray, k: int) -> Clustering:
    """Partition around medoids with weighted costs.

    Cost of a medoid set M is sum_i w_i * min_{m in M} D[i, m]. Each start
    runs greedy BUILD then the SWAP descent; small instances restart BUILD
    from every item as the seed (plus a farthest-first start for larger n)
    and the cheapest final solution wins, first-found on ties. Everything is
    deterministic given D, w, and the lowest-index tie rules. The swap trace
    reported is the winning start's, strictly decreasing from its BUILD cost.
    """
    n = D.shape[0]
    if k > n:
        raise DataValidationError(f"k={k} exceeds number of items n={n}")
    if k < 1:
        raise DataValidationError("k must be >= 1")
    w = np.asarray(w, dtype=np.float64)

    central = int(np.argmin(D.T @ w))
    if n <= EXHAUSTIVE_SEED_LIMIT:
        starts = [_greedy_build(D, w, k, first) for first in range(n)]
    else:
        starts = [_greedy_build(D, w, k, central), _farthest_first(D, w, k)]

    best_medoids, best_trace = None, None
    for start in starts:
        trace = [_cost(D, w, start)]
        medoids = _swap_descend(D, w, list(start), trace)
        if best_trace is None or trace[-1] < best_trace[-1] - 1e-12:
            best_medoids, best_trace = medoids, trace

    medoids = sorted(best_medoids)
    assignment = _assign(D, medoids)
    return Clustering(
        k=k,
        medoid_indices=medoids,
        assignment=assignment,
        total_cost=_cost(D, w, medoids),
        swap_trace=best_trace,
    )


def average_silhouette(D: np.ndarray, w: np.ndarray, clustering: Clustering) -> float:
    """Weighted average silhouette width in [-1, 1].

    Weights are treated as multiplicities: cohesion a(i) averages over the
    other W_C - 1 effective members (copies of i sit at distance zero), and
    separation b(i) is the best weighted mean distance to another cluster.
    Items alone in their cluster with unit weight contribute 0.
    """
    if clustering.k < 2:
        raise DataValidationError("silhouette requires k >= 2")
    w = np.asarray(w, dtype=np.float64)
    n = D.shape[0]
    medoids = clustering.medoid_indices
    # Weighted distance sums from every item to every cluster in one pass.
    member_lists = {m: clustering.members(m) for m in medoids}
    sums = np.empty((len(medoids), n))
    Wc = np.empty(len(medoids))
    for ci, m in enumerate(medoids):
        mem = member_lists[m]
        sums[ci] = D[:, mem] @ w[mem]
        Wc[ci] = w[mem].sum()
    cluster_of = {m: ci for ci, m in enumerate(medoids)}

    s = np.zeros(n)
    for i in range(n):
        ci = cluster_of[clustering.assignment[i]]
        W_own = Wc[ci]
        if W_own - 1.0 <= 1e-12:
            continue  # lone unit-weight item: contributes 0
        a = sums[ci, i] / (W_own - 1.0)  # own copies sit at distance 0
        b = np.inf
        for cj in range(len(medoids)):
            if cj != ci and Wc[cj] > 0:
                b = min(b, sums[cj, i] / Wc[cj])
        denom = max(a, b)
        if denom > 0 and np.isfinite(b):
            s[i] = (b - a) / denom
    return float((w * s).sum() / w.sum())


def select_k(
    D: np.ndarray, w: np.ndarray, kmin: int = 2, kmax: int | None = None
) -> Clustering:
    """Sweep k in [kmin, kmax] and keep the highest-ASW clustering.

    Ties prefer the smaller k. With n < 3 a non-degenerate silhouette cannot
    be formed; the fallback returns k = min(2, n) with ``asw=None`` flagged.
    """
    n = D.shape[0]
    if n < 3:
        k = min(2, n)
        clustering = pam_cluster(D, w, k)
        clustering.asw = None
        clustering.degenerate = True
        return clustering
    if kmax is None:
        kmax = min(10, n - 1)
    kmax = min(kmax, n - 1)
    if kmax < kmin:
        kmax = kmin
    best: Clustering | None = None
    for k in range(kmin, kmax + 1):
        clustering = pam_cluster(D, w, k)
        clustering.asw = average_silhouette(D, w, clustering)
        if best is None or clustering.asw > best.asw + 1e-12:
            best = clustering
    return best


def extract_medoids(clustering: Clustering, D: np.ndarray, w: np.ndarray) -> list[tuple[int, float]]:
    """Per cluster, the member with minimal weighted total distance to the rest.

    Recomputed from scratch as a check on the PAM assignment; returns
    (medoid index, cluster weight) pairs ordered by medoid index. Ties break
    on the lowest index.
    """
    w = np.asarray(w, dtype=np.float64)
    out = []
    for m in clustering.medoid_indices:
        members = clustering.members(m)
        sums = D[np.ix_(members, members)] @ w[members]  # self term is zero
        best_i = int(members[int(np.argmin(sums))])  # first minimum = lowest index
        out.append((best_i, float(w[members].sum())))
    return sorted(out, key=lambda t: t[0])
