"""Gradient embeddings from MC-dropout passes and a linear surrogate head.

The hypothetical regression target for a record is the per-box mean of its M
stochastic passes. The embedding of a record is the flattened gradient of the
summed smooth-L1 loss between the surrogate head's predictions and that
target, taken with respect to the head parameters. Records that already carry
an ingested embedding take precedence over the surrogate path, and a pool
must be homogeneous in embedding source.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import PoolSchemaError
from .records import BOX_DOF, BoxPrediction, PoolRecord

# Per-box surrogate feature: the 7 box parameters, the point density, and a bias.
FEATURE_DIM = BOX_DOF + 2


def average_passes(mc_passes: np.ndarray) -> np.ndarray:
    """Elementwise mean over the pass axis of an (M, N_B, 7) tensor."""
    if mc_passes is None:
        raise PoolSchemaError("record has no mc_passes; use ingested embeddings instead")
    if mc_passes.ndim != 3 or mc_passes.shape[2] != BOX_DOF:
        raise PoolSchemaError(f"mc_passes must have shape (M, N_B, {BOX_DOF})")
    return mc_passes.mean(axis=0)


def smooth_l1_value(pred: np.ndarray, target: np.ndarray) -> float:
    """Summed smooth-L1 loss: r^2/2 inside |r| < 1, |r| - 1/2 outside."""
    r = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    a = np.abs(r)
    return float(np.where(a < 1.0, 0.5 * r * r, a - 0.5).sum())


def smooth_l1_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Per-coordinate gradient in the residual r = pred - target.

    Equals r where |r| < 1 and sign(r) outside; the kink at |r| = 1 takes
    the subgradient value sign(r).
    """
    r = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return np.where(np.abs(r) < 1.0, r, np.sign(r))


def box_features(box: BoxPrediction) -> np.ndarray:
    # log1p keeps the long-tailed density feature on the scale of the box
    # coordinates, which a linear head (and Euclidean gradient distances)
    # need to treat classes evenhandedly.
    return np.array(
        list(box.box7) + [math.log1p(max(box.point_density, 0.0)), 1.0],
        dtype=np.float64,
    )


def record_features(record: PoolRecord) -> np.ndarray:
    """(N_B, FEATURE_DIM) feature matrix derived from the record's boxes."""
    if not record.boxes:
        return np.zeros((0, FEATURE_DIM), dtype=np.float64)
    return np.stack([box_features(b) for b in record.boxes])


def surrogate_gradient(record: PoolRecord, surrogate_params: np.ndarray) -> np.ndarray:
    """Analytic gradient of the record's surrogate regression loss, flattened.

    The head predicts box parameters as ``params @ features`` per box; the
    loss is the smooth-L1 against the record's averaged MC passes summed over
    boxes. Returns d loss / d params flattened row-major, so the embedding
    dimension is 7 * FEATURE_DIM regardless of box count.
    """
    params = np.asarray(surrogate_params, dtype=np.float64)
    if params.shape != (BOX_DOF, FEATURE_DIM):
        raise PoolSchemaError(
            f"surrogate params must have shape {(BOX_DOF, FEATURE_DIM)}, got {params.shape}"
        )
    if record.mc_passes is None:
        raise PoolSchemaError(
            f"record {record.cloud_id!r} has no mc_passes; use ingested embeddings instead"
        )
    target = average_passes(record.mc_passes)
    feats = record_features(record)
    preds = feats @ params.T
    resid_grad = smooth_l1_grad(preds, target)  # (N_B, 7)
    grad = resid_grad.T @ feats  # (7, FEATURE_DIM)
    return grad.reshape(-1)


def surrogate_loss(record: PoolRecord, surrogate_params: np.ndarray) -> float:
    """Loss value matching surrogate_gradient, for finite-difference checks."""
    params = np.asarray(surrogate_params, dtype=np.float64)
    target = average_passes(record.mc_passes)
    feats = record_features(record)
    return smooth_l1_value(feats @ params.T, target)


def embedding_for(
    record: PoolRecord, surrogate_params: np.ndarray | None = None
) -> tuple[np.ndarray, str]:
    """Embedding vector and its source: ingested wins over the surrogate path."""
    if record.gradient_embedding is not None:
        return record.gradient_embedding, "ingested"
    if surrogate_params is None:
        raise PoolSchemaError(
            f"record {record.cloud_id!r} has no gradient_embedding and no "
            "surrogate parameters were supplied"
        )
    return surrogate_gradient(record, surrogate_params), "surrogate"


def pool_embeddings(
    records: list[PoolRecord], surrogate_params: np.ndarray | None = None
) -> np.ndarray:
    """(n, D) embedding matrix; enforces a single source across the pool."""
    if not records:
        return np.zeros((0, BOX_DOF * FEATURE_DIM), dtype=np.float64)
    vecs = []
    sources = set()
    for record in records:
        vec, source = embedding_for(record, surrogate_params)
        sources.add(source)
        vecs.append(vec)
    if len(sources) > 1:
        raise PoolSchemaError(
            "pool mixes ingested and surrogate embeddings; sources must be homogeneous"
        )
    dims = {v.shape[0] for v in vecs}
    if len(dims) > 1:
        raise PoolSchemaError(f"inconsistent embedding dimensions in pool: {sorted(dims)}")
    return np.stack(vecs)
