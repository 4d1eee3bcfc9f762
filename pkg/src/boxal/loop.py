"""Multi-round selection loop: pretrain, select, annotate, refit, repeat.

Each run starts from a seeded random initial labeled set (its annotation is
delivered by the oracle but not charged to the budget), fits the surrogate
regression head on it by least squares, and then alternates strategy
selection, oracle annotation, head refit, and pool-record regeneration for
the configured number of rounds. Alignment metrics are computed per round
over the cumulative actively-selected set against references frozen at loop
start, so strategies sharing a seed are compared on identical footing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .config import StrategyConfig
from .density import balance_objective, pool_intervals
from .errors import ConfigError
from .gradients import pool_embeddings
from .label_scoring import histogram
from .oracle import AnnotationOracle
from .records import PoolRecord, SelectionRound
from .selection import RoundResult, select_round
from .synthetic import PoolState, build_records, initial_params

METRICS_HEADER = (
    "round,strategy,label_kl,cover_radius,density_score,spent_boxes,"
    "stage1_ms,stage2_ms,stage3_ms"
)

TIMING_MODES = ("none", "wall")


def label_kl_to_uniform(records: list[PoolRecord], num_classes: int) -> float:
    """KL of the plain predicted-label frequency histogram from uniform."""
    counts = np.zeros(num_classes, dtype=np.float64)
    for record in records:
        hist = histogram(record, num_classes)
        counts += np.asarray(hist.counts, dtype=np.float64)
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] * num_classes)))


def mean_cover_distance(
    reference_embeddings: np.ndarray, selected_embeddings: np.ndarray
) -> float:
    """Mean distance of the reference pool to its nearest selected embedding."""
    if len(selected_embeddings) == 0:
        return math.inf
    diff = reference_embeddings[:, None, :] - selected_embeddings[None, :, :]
    return float(np.sqrt((diff * diff).sum(axis=2)).min(axis=1).mean())


def alignment_metrics(
    selected_records: list[PoolRecord],
    cfg: StrategyConfig,
    intervals: dict[int, tuple[float, float]],
    reference_embeddings: np.ndarray | None = None,
    selected_embeddings: np.ndarray | None = None,
) -> dict[str, float]:
    """Label, representativeness, and density alignment of a selected set."""
    if not selected_records:
        raise ConfigError("alignment metrics need a nonempty selection")
    metrics = {
        "label_kl": label_kl_to_uniform(selected_records, cfg.num_classes),
        "density_score": balance_objective(selected_records, intervals, cfg).total,
    }
    if reference_embeddings is not None and selected_embeddings is not None:
        metrics["cover_radius"] = mean_cover_distance(
            reference_embeddings, selected_embeddings
        )
    return metrics


def refit_head(
    state: PoolState, annotated_ids: set[str], fallback: np.ndarray
) -> np.ndarray:
    """Least-squares refit of the regression head on all annotated boxes."""
    feats = []
    targets = []
    for cid in sorted(annotated_ids):
        scene = state.scene_by_id(cid)
        if scene.gt_box_count == 0:
            continue
        feats.append(state.observations[cid])
        targets.append(np.array([b.box7 for b in scene.true_boxes], dtype=np.float64))
    if not feats:
        return fallback
    X = np.concatenate(feats)
    Y = np.concatenate(targets)
    solution, *_ = np.linalg.lstsq(X, Y, rcond=None)
    return solution.T


@dataclass
class RunResult:
    manifest: dict
    rounds: list[SelectionRound]
    metrics_rows: list[dict]
    params_history: list[np.ndarray] = field(default_factory=list)


def _ms(seconds: float, timing_mode: str) -> float:
    return seconds * 1000.0 if timing_mode == "wall" else 0.0


def run_loop(
    cfg: StrategyConfig,
    state: PoolState,
    records: list[PoolRecord] | None = None,
    budget_boxes: float = math.inf,
    init_labeled: int | None = None,
    timing_mode: str = "none",
    threads: int = 1,
) -> RunResult:
    """Execute the full selection loop and return manifest, rounds, and metrics.

    ``records`` may carry a pre-generated pool matching ``state``; it is
    otherwise built from the state. The initial labeled set has
    ``init_labeled`` clouds (default Nr) drawn by the run's generator.
    """
    if timing_mode not in TIMING_MODES:
        raise ConfigError(f"timing_mode must be one of {TIMING_MODES}, got {timing_mode!r}")
    rng = np.random.default_rng(cfg.seed)
    all_ids = [s.cloud_id for s in state.scenes]
    if not all_ids:
        raise ConfigError("cannot run the loop on an empty pool")
    m = cfg.nr if init_labeled is None else init_labeled
    m = min(m, max(len(all_ids) - 1, 0))

    oracle = AnnotationOracle(state, budget_boxes=budget_boxes)
    init_ids = [all_ids[i] for i in rng.choice(len(all_ids), size=m, replace=False)] if m else []
    if init_ids:
        oracle.annotate(init_ids, charge_budget=False)
    params = refit_head(state, set(init_ids), initial_params())
    params_history = [params]

    pool_ids = sorted(set(all_ids) - set(init_ids))
    pool_records = build_records(state, params, cfg, rng, ids=pool_ids)
    labeled_records = build_records(state, params, cfg, rng, ids=init_ids)

    # References frozen at loop start so every strategy is measured identically.
    ref_intervals = pool_intervals(pool_records, cfg.num_classes)
    ref_embeddings = pool_embeddings(pool_records)

    by_id = {r.cloud_id: r for r in pool_records}
    selected_snapshots: list[PoolRecord] = []
    rounds: list[SelectionRound] = []
    metrics_rows: list[dict] = []
    early_stop: dict | None = None

    for round_index in range(cfg.rounds):
        if not pool_records:
            early_stop = {"round": round_index, "reason": "pool_exhausted"}
            break
        labeled_emb = pool_embeddings(labeled_records) if labeled_records else None
        result: RoundResult = select_round(
            pool_records,
            cfg,
            rng=rng,
            round_index=round_index,
            labeled_embeddings=labeled_emb,
            surrogate_params=params,
            boxes_annotated_cumulative=oracle.ledger.spent,
            threads=threads,
        )
        requested = list(result.round.selected_ids)
        outcome = oracle.annotate(requested)
        annotated_ids = [a.cloud_id for a in outcome.annotations]
        selected_snapshots.extend(by_id[cid] for cid in annotated_ids)

        if selected_snapshots:
            metrics = alignment_metrics(
                selected_snapshots,
                cfg,
                ref_intervals,
                reference_embeddings=ref_embeddings,
                selected_embeddings=pool_embeddings(selected_snapshots),
            )
        else:  # budget refused even the first cloud
            metrics = {"label_kl": 0.0, "cover_radius": 0.0, "density_score": 0.0}
        s1, s2, s3 = result.stage_seconds
        diagnostics = dict(result.round.diagnostics)
        diagnostics.update(metrics)
        diagnostics["stage1_ms"] = _ms(s1, timing_mode)
        diagnostics["stage2_ms"] = _ms(s2, timing_mode)
        diagnostics["stage3_ms"] = _ms(s3, timing_mode)
        if outcome.truncated:
            diagnostics["budget_truncated"] = 1.0
        stage_sizes = result.round.stage_sizes
        if outcome.truncated:
            stage_sizes = (stage_sizes[0], stage_sizes[1], len(annotated_ids))
        rnd = SelectionRound(
            round_index=round_index,
            selected_ids=tuple(annotated_ids),
            stage_sizes=stage_sizes,
            boxes_annotated_cumulative=oracle.ledger.spent,
            diagnostics=diagnostics,
        )
        rnd.validate()
        rounds.append(rnd)
        metrics_rows.append(
            {
                "round": round_index,
                "strategy": cfg.strategy.value,
                "label_kl": metrics["label_kl"],
                "cover_radius": metrics["cover_radius"],
                "density_score": metrics["density_score"],
                "spent_boxes": oracle.ledger.spent,
                "stage1_ms": diagnostics["stage1_ms"],
                "stage2_ms": diagnostics["stage2_ms"],
                "stage3_ms": diagnostics["stage3_ms"],
            }
        )

        if outcome.truncated:
            early_stop = {"round": round_index, "reason": "budget_exhausted"}
            break

        # Retrain the head from scratch on everything annotated, then refresh
        # the remaining pool's records under the new head.
        params = refit_head(state, oracle.annotated_ids, params)
        params_history.append(params)
        pool_ids = sorted(set(pool_ids) - set(annotated_ids))
        pool_records = build_records(state, params, cfg, rng, ids=pool_ids)
        labeled_records = build_records(state, params, cfg, rng, ids=sorted(oracle.annotated_ids))
        by_id = {r.cloud_id: r for r in pool_records}

    final_metrics = dict(metrics_rows[-1]) if metrics_rows else {}
    final_metrics.pop("round", None)
    final_metrics.pop("strategy", None)
    manifest = {
        "config": {
            "num_classes": cfg.num_classes,
            "k1": cfg.k1,
            "k2": cfg.k2,
            "nr": cfg.nr,
            "rounds": cfg.rounds,
            "bandwidth": cfg.bandwidth,
            "mc_passes": cfg.mc_passes,
            "dropout_rate": cfg.dropout_rate,
            "grid_size": cfg.grid_size,
            "seed": cfg.seed,
            "strategy": cfg.strategy.value,
            "budget_boxes": None if math.isinf(budget_boxes) else budget_boxes,
            "init_labeled": m,
            "timing_mode": timing_mode,
            "pool_size": len(all_ids),
        },
        "rounds": [
            {
                "round_index": r.round_index,
                "selected_ids": list(r.selected_ids),
                "stage_sizes": list(r.stage_sizes),
                "boxes_annotated_cumulative": r.boxes_annotated_cumulative,
                "diagnostics": {k: float(v) for k, v in sorted(r.diagnostics.items())},
            }
            for r in rounds
        ],
        "final_metrics": final_metrics,
        "budget": {
            "budget_boxes": None if math.isinf(budget_boxes) else budget_boxes,
            "spent": oracle.ledger.spent,
            "per_round": list(oracle.ledger.per_round),
        },
        "early_stop": early_stop,
    }
    return RunResult(
        manifest=manifest,
        rounds=rounds,
        metrics_rows=metrics_rows,
        params_history=params_history,
    )


def manifest_json(manifest: dict) -> str:
    return json.dumps(manifest, sort_keys=True, indent=2) + "\n"


def metrics_csv_text(rows: list[dict]) -> str:
    lines = [METRICS_HEADER]
    for row in rows:
        lines.append(
            f"{row['round']},{row['strategy']},{float(row['label_kl'])!r},"
            f"{float(row['cover_radius'])!r},{float(row['density_score'])!r},"
            f"{int(row['spent_boxes'])},{float(row['stage1_ms'])!r},"
            f"{float(row['stage2_ms'])!r},{float(row['stage3_ms'])!r}"
        )
    return "\n".join(lines) + "\n"
