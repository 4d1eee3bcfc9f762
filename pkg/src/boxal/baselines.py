"""Reference acquisition strategies sharing the engine's record interfaces.

All strategies return distinct in-pool ids, |output| = min(nr, |pool|), and
are deterministic given their inputs and seed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import PoolSchemaError
from .label_scoring import select_top_k1
from .records import PoolRecord

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StrategyOutput:
    selected_ids: tuple[str, ...]
    scores: dict[str, float] | None = None


def _as_rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def rand_select(pool: list[PoolRecord], nr: int, seed) -> StrategyOutput:
    """Uniform sample without replacement from the seeded generator."""
    rng = _as_rng(seed)
    n = min(nr, len(pool))
    idx = rng.choice(len(pool), size=n, replace=False)
    return StrategyOutput(selected_ids=tuple(pool[i].cloud_id for i in idx))


def entropy_select(pool: list[PoolRecord], nr: int, num_classes: int) -> StrategyOutput:
    """Top-nr by label entropy; identical to the first-stage filter with K1 = nr."""
    ids = select_top_k1(pool, nr, num_classes)
    return StrategyOutput(selected_ids=tuple(ids))


def coreset_select(
    ids: list[str],
    embeddings: np.ndarray,
    labeled_embeddings: np.ndarray | None,
    nr: int,
) -> StrategyOutput:
    """Greedy furthest-first cover of the embedding space.

    Each pick maximizes the distance to the nearest already-covered point
    (labeled plus selected), ties broken by ascending id. With no labeled
    points the cover is seeded with the maximum-norm point.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != len(ids):
        raise PoolSchemaError(f"embeddings shape {X.shape} does not match {len(ids)} ids")
    n = len(ids)
    take = min(nr, n)
    order = np.argsort(np.asarray(ids, dtype=object), kind="stable")
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)

    selected: list[int] = []
    scores: dict[str, float] = {}
    if labeled_embeddings is not None and len(labeled_embeddings) > 0:
        L = np.asarray(labeled_embeddings, dtype=np.float64)
        if L.shape[1] != X.shape[1]:
            raise PoolSchemaError(
                f"labeled embedding dimension {L.shape[1]} != pool dimension {X.shape[1]}"
            )
        min_dist = np.sqrt(((X[:, None, :] - L[None, :, :]) ** 2).sum(axis=2)).min(axis=1)
    else:
        norms = np.sqrt((X * X).sum(axis=1))
        tied = np.flatnonzero(norms >= norms.max())
        first = int(tied[np.argmin(rank[tied])])
        selected.append(first)
        scores[ids[first]] = float(norms[first])
        min_dist = np.sqrt(((X - X[first]) ** 2).sum(axis=1))

    while len(selected) < take:
        gap = min_dist.copy()
        gap[selected] = -np.inf
        tied = np.flatnonzero(gap >= gap.max())
        pick = int(tied[np.argmin(rank[tied])])
        selected.append(pick)
        scores[ids[pick]] = float(min_dist[pick])
        min_dist = np.minimum(min_dist, np.sqrt(((X - X[pick]) ** 2).sum(axis=1)))
    return StrategyOutput(
        selected_ids=tuple(ids[i] for i in selected),
        scores=scores,
    )


def badge_select(
    ids: list[str],
    embeddings: np.ndarray,
    nr: int,
    seed,
) -> StrategyOutput:
    """k-means++ style D^2-weighted sampling over gradient embeddings.

    The first pick is uniform; each later pick is drawn with probability
    proportional to the squared distance to the nearest selected point.
    Duplicates of selected points therefore have zero probability. If every
    remaining point duplicates a selected one, the lowest remaining id is
    taken deterministically.
    """
    rng = _as_rng(seed)
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != len(ids):
        raise PoolSchemaError(f"embeddings shape {X.shape} does not match {len(ids)} ids")
    n = len(ids)
    take = min(nr, n)
    selected: list[int] = []
    first = int(rng.integers(n))
    selected.append(first)
    sq_dist = ((X - X[first]) ** 2).sum(axis=1)
    while len(selected) < take:
        weights = sq_dist.copy()
        weights[selected] = 0.0
        total = weights.sum()
        if total <= 0.0:
            remaining = sorted(set(range(n)) - set(selected), key=lambda i: ids[i])
            pick = remaining[0]
        else:
            pick = int(rng.choice(n, p=weights / total))
        selected.append(pick)
        sq_dist = np.minimum(sq_dist, ((X - X[pick]) ** 2).sum(axis=1))
    return StrategyOutput(selected_ids=tuple(ids[i] for i in selected))


def mc_reg_select(pool: list[PoolRecord], nr: int) -> StrategyOutput:
    """Top-nr by MC-pass regression variance.

    A record's score is the unbiased variance across its M passes, averaged
    over every box and coordinate; records without passes are excluded with
    a warning.
    """
    scores: dict[str, float] = {}
    skipped = 0
    for record in pool:
        if record.mc_passes is None:
            skipped += 1
            continue
        if record.mc_passes.shape[0] < 2 or record.n_boxes == 0:
            scores[record.cloud_id] = 0.0
            continue
        scores[record.cloud_id] = float(record.mc_passes.var(axis=0, ddof=1).mean())
    if skipped:
        log.warning("mc_reg: excluded %d records lacking mc_passes", skipped)
    if not scores:
        raise PoolSchemaError("mc_reg: no record in the pool carries mc_passes")
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    take = min(nr, len(ranked))
    return StrategyOutput(
        selected_ids=tuple(cid for cid, _ in ranked[:take]),
        scores=scores,
    )
