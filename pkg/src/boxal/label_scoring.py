"""Per-cloud label-entropy scoring and top-K filtering.

The class distribution of a cloud is the softmax of its relative class
frequencies (count_c / N_B), and the score is the Shannon entropy (natural
log) of that distribution. Clouds with no boxes score 0. The top-K filter
sorts by descending entropy with ties broken by ascending cloud_id, so the
result is independent of pool order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyHistogramError
from .parallel import thread_map
from .records import PoolRecord


@dataclass(frozen=True)
class LabelHistogram:
    """Per-cloud class counts. len(counts) == num_classes, all entries >= 0."""

    counts: tuple[int, ...]

    @property
    def n_boxes(self) -> int:
        return sum(self.counts)


@dataclass(frozen=True)
class EntropyScore:
    cloud_id: str
    entropy: float


def histogram(record: PoolRecord, num_classes: int) -> LabelHistogram:
    counts = [0] * num_classes
    for box in record.boxes:
        counts[box.class_id] += 1
    return LabelHistogram(tuple(counts))


def class_probs(hist: LabelHistogram) -> np.ndarray:
    """Softmax over relative class frequencies; raises on an empty histogram."""
    n = hist.n_boxes
    if n == 0:
        raise EmptyHistogramError("cloud has no boxes")
    rel = np.asarray(hist.counts, dtype=np.float64) / n
    shifted = np.exp(rel - rel.max())
    return shifted / shifted.sum()


def label_entropy(hist: LabelHistogram) -> float:
    """Shannon entropy of class_probs(hist); 0 for a boxless cloud.

    Uses H = ln(sum e^u) - (sum u e^u) / (sum e^u) with u shifted by its
    max, which returns ln(C) bit-exactly for a uniform histogram.
    """
    n = hist.n_boxes
    if n == 0:
        return 0.0
    rel = np.asarray(hist.counts, dtype=np.float64) / n
    u = rel - rel.max()
    e = np.exp(u)
    s = e.sum()
    return float(np.log(s) - (u * e).sum() / s)


def score_pool(
    pool: list[PoolRecord], num_classes: int, threads: int = 1
) -> list[EntropyScore]:
    def one(record: PoolRecord) -> EntropyScore:
        return EntropyScore(record.cloud_id, label_entropy(histogram(record, num_classes)))

    return thread_map(one, pool, threads)


def select_top_k1(
    pool: list[PoolRecord], k1: int, num_classes: int, threads: int = 1
) -> list[str]:
    """Ids of the min(k1, |pool|) highest-entropy clouds, deterministically ordered."""
    if k1 < 1:
        raise ValueError(f"k1 must be >= 1, got {k1}")
    scores = score_pool(pool, num_classes, threads=threads)
    ranked = sorted(scores, key=lambda s: (-s.entropy, s.cloud_id))
    return [s.cloud_id for s in ranked[:k1]]
