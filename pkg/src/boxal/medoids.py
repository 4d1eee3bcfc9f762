"""Pairwise distances and PAM k-medoids (BUILD + best-improvement SWAP).

BUILD seeds the first medoid as the point of minimum total distance and then
greedily adds the point giving the largest cost reduction. SWAP repeatedly
applies the single (medoid, non-medoid) exchange with the best strict cost
improvement until none exists. All ties break on ascending cloud_id, so the
result is deterministic; the ``seed`` argument is accepted for interface
uniformity but the algorithm draws no random numbers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import PoolSchemaError

log = logging.getLogger(__name__)


def pairwise_distances(embeddings: np.ndarray, threads: int = 1) -> np.ndarray:
    """Symmetric Euclidean distance matrix with an exactly zero diagonal."""
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2:
        raise PoolSchemaError(f"embeddings must be a 2-D matrix, got {X.ndim} dims")
    diff = X[:, None, :] - X[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    # Enforce exact symmetry and zero diagonal against rounding.
    dist = 0.5 * (dist + dist.T)
    np.fill_diagonal(dist, 0.0)
    return dist


@dataclass(frozen=True)
class MedoidResult:
    medoid_ids: tuple[str, ...]
    assignment: dict[str, int]
    total_cost: float
    note: str | None = None


def _total_cost(dist: np.ndarray, medoids: list[int]) -> float:
    return float(dist[:, medoids].min(axis=1).sum())


def k_medoids(ids: list[str], dist: np.ndarray, k2: int, seed: int = 0) -> MedoidResult:
    """Pick k2 medoids among ids given their distance matrix."""
    n = len(ids)
    if dist.shape != (n, n):
        raise PoolSchemaError(f"distance matrix shape {dist.shape} does not match {n} ids")
    if k2 < 1:
        raise PoolSchemaError(f"k2 must be >= 1, got {k2}")
    order = np.lexsort((np.asarray(ids, dtype=object),))  # ascending id for tie-breaks
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)

    if k2 >= n:
        note = None
        if k2 > n:
            note = f"k2={k2} exceeds pool size {n}; returning every point as a medoid"
            log.warning(note)
        chosen = sorted(range(n), key=lambda i: ids[i])
        return MedoidResult(
            medoid_ids=tuple(ids[i] for i in chosen),
            assignment={ids[i]: chosen.index(i) for i in range(n)},
            total_cost=0.0,
            note=note,
        )

    # BUILD: seed with the 1-medoid optimum, then add best-improvement points.
    totals = dist.sum(axis=1)
    first = min(range(n), key=lambda i: (totals[i], ids[i]))
    medoids = [first]
    nearest = dist[:, first].copy()
    while len(medoids) < k2:
        # Gain of adding candidate c: sum of max(nearest - d(:, c), 0).
        gains = np.maximum(nearest[:, None] - dist, 0.0).sum(axis=0)
        gains[medoids] = -np.inf
        best_gain = gains.max()
        tied = np.flatnonzero(gains >= best_gain - 0.0)
        c = int(tied[np.argmin(rank[tied])])
        medoids.append(c)
        nearest = np.minimum(nearest, dist[:, c])

    # SWAP: best-improvement exchanges until no swap strictly reduces cost.
    current = _total_cost(dist, medoids)
    while True:
        med_cols = dist[:, medoids]  # (n, k)
        nearest_idx = med_cols.argmin(axis=1)
        nearest_d = med_cols[np.arange(n), nearest_idx]
        med_cols_masked = med_cols.copy()
        med_cols_masked[np.arange(n), nearest_idx] = np.inf
        second_d = med_cols_masked.min(axis=1)

        non_medoids = np.array([i for i in range(n) if i not in medoids], dtype=np.int64)
        rank_nm = rank[non_medoids]
        best = None  # (new_cost, rank_m, rank_h, slot, h)
        for slot, m in enumerate(medoids):
            base = np.where(nearest_idx == slot, second_d, nearest_d)
            # New cost for every candidate replacement h at once.
            cand_cost = np.minimum(base[:, None], dist[:, non_medoids]).sum(axis=0)
            jt = np.flatnonzero(cand_cost <= cand_cost.min())
            j = int(jt[np.argmin(rank_nm[jt])])
            key = (float(cand_cost[j]), int(rank[m]), int(rank_nm[j]))
            if cand_cost[j] < current - 1e-12 and (best is None or key < best[:3]):
                best = key + (slot, int(non_medoids[j]))
        if best is None:
            break
        current = best[0]
        medoids[best[3]] = best[4]

    medoids_sorted = sorted(medoids, key=lambda i: ids[i])
    med_cols = dist[:, medoids_sorted]
    nearest_idx = med_cols.argmin(axis=1)
    total = float(med_cols[np.arange(n), nearest_idx].sum())
    return MedoidResult(
        medoid_ids=tuple(ids[i] for i in medoids_sorted),
        assignment={ids[i]: int(nearest_idx[i]) for i in range(n)},
        total_cost=total,
    )
