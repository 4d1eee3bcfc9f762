"""Per-class density balancing: Gaussian KDE, grid KL to a uniform prior,
arctan normalization, and greedy subset selection.

For each class, the point densities of the predicted boxes in a candidate
set are smoothed with a Gaussian KDE and compared against a uniform prior
supported on that class's 95% density interval (computed once per round
from every predicted box in the pool). The KL divergence is evaluated on a
fixed grid restricted to the interval, renormalized to a discrete
distribution, and squashed through d_bar = (2/pi) * arctan((pi/2) * d) so no
single class dominates. The greedy selector grows the set one candidate at
a time, always taking the candidate whose inclusion minimizes the summed
normalized divergence; classes present in the pool but missing from the
tentative set are charged the maximal penalty d_bar = 1, which pushes the
selection toward class coverage. Ties break on ascending cloud_id.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .config import StrategyConfig
from .errors import DegeneratePoolError
from .records import PoolRecord

log = logging.getLogger(__name__)

_GAUSS_NORM = 1.0 / math.sqrt(2.0 * math.pi)


def kde_pdf(samples, h: float, x):
    """Gaussian-kernel density estimate of ``samples`` evaluated at ``x``.

    ``x`` may be a scalar or a vector; the result matches its shape.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise DegeneratePoolError("no boxes of this class: KDE needs at least one sample")
    if not h > 0:
        raise ValueError(f"bandwidth must be > 0, got {h}")
    xs = np.atleast_1d(np.asarray(x, dtype=np.float64))
    u = (xs[:, None] - samples[None, :]) / h
    vals = _GAUSS_NORM * np.exp(-0.5 * u * u)
    out = vals.sum(axis=1) / (samples.size * h)
    return float(out[0]) if np.isscalar(x) or np.ndim(x) == 0 else out


def density_interval(all_densities) -> tuple[float, float]:
    """Empirical (2.5th, 97.5th) percentile bounds with linear interpolation."""
    values = np.asarray(all_densities, dtype=np.float64)
    if values.size < 2:
        raise DegeneratePoolError(f"need at least 2 density values, got {values.size}")
    lo, hi = np.percentile(values, [2.5, 97.5])
    if not lo < hi:
        raise DegeneratePoolError(f"degenerate density interval [{lo}, {hi}]")
    return float(lo), float(hi)


@dataclass(frozen=True)
class DensityModel:
    """Per-class KDE inputs plus the interval and evaluation grid."""

    class_id: int
    samples: np.ndarray
    bandwidth: float
    alpha_lo: float
    alpha_hi: float
    grid: np.ndarray

    def __post_init__(self) -> None:
        if not self.alpha_lo < self.alpha_hi:
            raise DegeneratePoolError(
                f"alpha_lo {self.alpha_lo} must be < alpha_hi {self.alpha_hi}"
            )
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")


def build_density_model(
    class_id: int,
    samples,
    bandwidth: float,
    interval: tuple[float, float],
    grid_size: int,
) -> DensityModel:
    lo, hi = interval
    return DensityModel(
        class_id=class_id,
        samples=np.asarray(samples, dtype=np.float64),
        bandwidth=bandwidth,
        alpha_lo=lo,
        alpha_hi=hi,
        grid=np.linspace(lo, hi, grid_size),
    )


def _grid_kl(raw_mass: np.ndarray, warn: bool = False) -> float:
    """KL(p_hat || uniform) of renormalized grid mass; ln G if mass is all zero."""
    total = raw_mass.sum()
    g = raw_mass.size
    if total <= 0.0:
        if warn:
            log.warning("all grid mass is zero; returning the maximum divergence ln(G)")
        return math.log(g)
    p = raw_mass / total
    nz = p > 0.0
    return float(np.sum(p[nz] * np.log(p[nz] * g)))


def kl_to_uniform(model: DensityModel) -> float:
    """KL divergence of the model's grid-evaluated KDE from the uniform prior."""
    mass = kde_pdf(model.samples, model.bandwidth, model.grid)
    return _grid_kl(np.asarray(mass), warn=True)


def arctan_normalize(d: float) -> float:
    """Monotone squash of a KL value onto [0, 1): 0 -> 0, infinity -> 1."""
    if d < 0:
        raise ValueError(f"divergence must be nonnegative, got {d}")
    return (2.0 / math.pi) * math.atan((math.pi / 2.0) * d)


@dataclass(frozen=True)
class BalanceScore:
    """Per-class divergences, their normalized values, and the summed objective.

    Classes without a usable pool-wide density interval are excluded and
    reported as NaN; classes absent from the scored subset carry d = inf
    and d_bar = 1.
    """

    per_class_kl: np.ndarray
    normalized: np.ndarray
    total: float


def class_density_samples(records: list[PoolRecord], num_classes: int) -> dict[int, np.ndarray]:
    buckets: dict[int, list[float]] = {c: [] for c in range(num_classes)}
    for record in records:
        for box in record.boxes:
            buckets[box.class_id].append(box.point_density)
    return {c: np.asarray(v, dtype=np.float64) for c, v in buckets.items()}


def pool_intervals(records: list[PoolRecord], num_classes: int) -> dict[int, tuple[float, float]]:
    """Per-class 95% density bounds over every predicted box in the pool.

    Classes with fewer than two boxes or a zero-width spread carry no
    signal and are omitted.
    """
    intervals: dict[int, tuple[float, float]] = {}
    for c, values in class_density_samples(records, num_classes).items():
        try:
            intervals[c] = density_interval(values)
        except DegeneratePoolError:
            log.warning("class %d has no usable density interval; excluded from balancing", c)
    return intervals


def _kernel_sums(
    records: list[PoolRecord],
    grids: dict[int, np.ndarray],
    h: float,
) -> tuple[dict[int, np.ndarray], dict[int, int]]:
    """Unnormalized per-class kernel mass on each grid, in canonical id order."""
    sums = {c: np.zeros_like(g) for c, g in grids.items()}
    counts = {c: 0 for c in grids}
    for record in sorted(records, key=lambda r: r.cloud_id):
        for box in record.boxes:
            if box.class_id in grids:
                u = (grids[box.class_id] - box.point_density) / h
                sums[box.class_id] += np.exp(-0.5 * u * u)
                counts[box.class_id] += 1
    return sums, counts


def _score_from_sums(
    sums: dict[int, np.ndarray],
    counts: dict[int, int],
    num_classes: int,
) -> BalanceScore:
    per_kl = np.full(num_classes, np.nan)
    per_norm = np.full(num_classes, np.nan)
    total = 0.0
    for c in sums:
        if counts[c] == 0:
            per_kl[c] = np.inf
            per_norm[c] = 1.0
        else:
            d = _grid_kl(sums[c])
            per_kl[c] = d
            per_norm[c] = arctan_normalize(d)
        total += per_norm[c]
    return BalanceScore(per_class_kl=per_kl, normalized=per_norm, total=float(total))


def balance_objective(
    records: list[PoolRecord],
    intervals: dict[int, tuple[float, float]],
    cfg: StrategyConfig,
) -> BalanceScore:
    """Canonical summed normalized divergence of a record set.

    The kernel-mass renormalization makes the KDE's normalization constant
    cancel, so the score is computed from raw Gaussian kernel sums.
    """
    grids = {c: np.linspace(lo, hi, cfg.grid_size) for c, (lo, hi) in intervals.items()}
    sums, counts = _kernel_sums(records, grids, cfg.bandwidth)
    return _score_from_sums(sums, counts, cfg.num_classes)


@dataclass(frozen=True)
class GreedyStep:
    step_index: int
    chosen_id: str
    objective: float
    per_class_kl: np.ndarray
    per_class_norm: np.ndarray
    candidate_objectives: dict[str, float] = field(default_factory=dict)


def greedy_balance(
    candidates: list[PoolRecord],
    nr: int,
    cfg: StrategyConfig,
    intervals: dict[int, tuple[float, float]],
) -> tuple[list[str], list[GreedyStep]]:
    """Forward-greedy selection of nr candidates minimizing the balance objective.

    Candidate kernel contributions are cached per class so each step costs
    O(|candidates| * C * G). Returns the chosen ids in selection order plus a
    per-step log carrying every candidate's objective for auditability.
    """
    if nr < 1:
        raise ValueError(f"nr must be >= 1, got {nr}")
    if nr > len(candidates):
        log.warning(
            "nr=%d exceeds candidate count %d; selecting all", nr, len(candidates)
        )
        nr = len(candidates)
    if not intervals:
        raise DegeneratePoolError("no class has a usable density interval")

    grids = {c: np.linspace(lo, hi, cfg.grid_size) for c, (lo, hi) in intervals.items()}
    by_id = {r.cloud_id: r for r in candidates}
    contrib: dict[str, dict[int, np.ndarray]] = {}
    box_counts: dict[str, dict[int, int]] = {}
    for record in candidates:
        sums, counts = _kernel_sums([record], grids, cfg.bandwidth)
        contrib[record.cloud_id] = sums
        box_counts[record.cloud_id] = counts

    running = {c: np.zeros_like(g) for c, g in grids.items()}
    running_counts = {c: 0 for c in grids}
    remaining = sorted(by_id)
    selected: list[str] = []
    steps: list[GreedyStep] = []

    for step_index in range(nr):
        best_id = None
        best_obj = math.inf
        objectives: dict[str, float] = {}
        for cid in remaining:
            total = 0.0
            for c in grids:
                n_c = running_counts[c] + box_counts[cid][c]
                if n_c == 0:
                    total += 1.0
                else:
                    total += arctan_normalize(_grid_kl(running[c] + contrib[cid][c]))
            objectives[cid] = total
            if total < best_obj:  # remaining is id-sorted, so first win is the tie-break
                best_obj = total
                best_id = cid
        assert best_id is not None
        for c in grids:
            running[c] = running[c] + contrib[best_id][c]
            running_counts[c] += box_counts[best_id][c]
        selected.append(best_id)
        remaining.remove(best_id)
        score = _score_from_sums(running, running_counts, cfg.num_classes)
        steps.append(
            GreedyStep(
                step_index=step_index,
                chosen_id=best_id,
                objective=best_obj,
                per_class_kl=score.per_class_kl,
                per_class_norm=score.normalized,
                candidate_objectives=objectives,
            )
        )
    return selected, steps
