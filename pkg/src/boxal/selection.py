"""One selection round: the three-stage pipeline plus the baseline dispatch.

The three-stage path filters the pool to the top-K1 clouds by label entropy,
reduces those to K2 medoid prototypes in gradient-embedding space, and
greedily picks the Nr candidates whose box densities best balance the
per-class uniform priors. Baselines select Nr directly. Stage wall times are
always measured and returned; whether they reach the serialized diagnostics
is the caller's timing-mode decision.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .baselines import (
    StrategyOutput,
    badge_select,
    coreset_select,
    entropy_select,
    mc_reg_select,
    rand_select,
)
from .config import Strategy, StrategyConfig
from .density import GreedyStep, balance_objective, greedy_balance, pool_intervals
from .errors import PoolSchemaError
from .gradients import pool_embeddings
from .label_scoring import select_top_k1
from .medoids import k_medoids, pairwise_distances
from .records import PoolRecord, SelectionRound


@dataclass(frozen=True)
class RoundResult:
    round: SelectionRound
    stage_seconds: tuple[float, float, float]
    greedy_steps: list[GreedyStep] = field(default_factory=list)
    medoid_ids: tuple[str, ...] = ()


def validate_pool_for_strategy(records: list[PoolRecord], strategy: Strategy) -> None:
    """Strict per-strategy field checks for file-driven selection.

    Names the missing field and the first offending cloud_id.
    """
    if strategy == Strategy.MC_REG:
        for record in records:
            if record.mc_passes is None:
                raise PoolSchemaError(
                    f"strategy mc_reg requires field 'mc_passes'; "
                    f"first offending cloud_id: {record.cloud_id!r}"
                )
    if strategy in (Strategy.CRB, Strategy.CORESET, Strategy.BADGE):
        for record in records:
            if record.gradient_embedding is None:
                raise PoolSchemaError(
                    f"strategy {strategy.value} requires field 'gradient_embedding'; "
                    f"first offending cloud_id: {record.cloud_id!r}"
                )


def select_round(
    records: list[PoolRecord],
    cfg: StrategyConfig,
    rng: np.random.Generator | None = None,
    round_index: int = 0,
    labeled_embeddings: np.ndarray | None = None,
    surrogate_params: np.ndarray | None = None,
    boxes_annotated_cumulative: int = 0,
    threads: int = 1,
) -> RoundResult:
    """Run one round of the configured strategy over the current pool."""
    if not records:
        raise PoolSchemaError("cannot select from an empty pool")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    n = len(records)
    by_id = {r.cloud_id: r for r in records}
    stage_s = [0.0, 0.0, 0.0]
    greedy_steps: list[GreedyStep] = []
    medoid_ids: tuple[str, ...] = ()
    diagnostics: dict[str, float] = {}

    if cfg.strategy == Strategy.CRB:
        t0 = time.perf_counter()
        ids1 = select_top_k1(records, cfg.k1, cfg.num_classes, threads=threads)
        stage_s[0] = time.perf_counter() - t0

        t0 = time.perf_counter()
        subset1 = [by_id[cid] for cid in ids1]
        emb = pool_embeddings(subset1, surrogate_params)
        dist = pairwise_distances(emb, threads=threads)
        medoids = k_medoids(ids1, dist, cfg.k2, seed=cfg.seed)
        medoid_ids = medoids.medoid_ids
        stage_s[1] = time.perf_counter() - t0

        t0 = time.perf_counter()
        intervals = pool_intervals(records, cfg.num_classes)
        subset2 = [by_id[cid] for cid in medoid_ids]
        selected, greedy_steps = greedy_balance(subset2, cfg.nr, cfg, intervals)
        stage_s[2] = time.perf_counter() - t0

        stage_sizes = (len(ids1), len(medoid_ids), len(selected))
        final = balance_objective([by_id[cid] for cid in selected], intervals, cfg)
        diagnostics["balance_objective"] = final.total
        diagnostics["medoid_cost"] = medoids.total_cost
        output = StrategyOutput(selected_ids=tuple(selected))
    else:
        t0 = time.perf_counter()
        if cfg.strategy == Strategy.RAND:
            output = rand_select(records, cfg.nr, rng)
        elif cfg.strategy == Strategy.ENTROPY:
            output = entropy_select(records, cfg.nr, cfg.num_classes)
        elif cfg.strategy == Strategy.CORESET:
            ids = [r.cloud_id for r in records]
            emb = pool_embeddings(records, surrogate_params)
            output = coreset_select(ids, emb, labeled_embeddings, cfg.nr)
        elif cfg.strategy == Strategy.BADGE:
            ids = [r.cloud_id for r in records]
            emb = pool_embeddings(records, surrogate_params)
            output = badge_select(ids, emb, cfg.nr, rng)
        elif cfg.strategy == Strategy.MC_REG:
            output = mc_reg_select(records, cfg.nr)
        else:  # pragma: no cover - enum is exhaustive
            raise PoolSchemaError(f"unknown strategy {cfg.strategy}")
        stage_s[0] = time.perf_counter() - t0
        stage_sizes = (n, n, len(output.selected_ids))

    rnd = SelectionRound(
        round_index=round_index,
        selected_ids=output.selected_ids,
        stage_sizes=stage_sizes,
        boxes_annotated_cumulative=boxes_annotated_cumulative,
        diagnostics=diagnostics,
    )
    return RoundResult(
        round=rnd,
        stage_seconds=(stage_s[0], stage_s[1], stage_s[2]),
        greedy_steps=greedy_steps,
        medoid_ids=medoid_ids,
    )
