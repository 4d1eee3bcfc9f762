"""Export detector outputs as engine-compatible pool records.

For every dataset frame the exporter runs the detector once deterministically
for the emitted boxes, M more times with dropout enabled for the stochastic
regression passes, and one gradient computation of the smooth-L1 loss between
the deterministic regression output and the mean of the passes, taken with
respect to the configured layer's weight and flattened row-major. The output
is one JSON Lines record per frame in the pool-file schema; a sidecar
``<out>.meta.json`` documents the gradient layer, its weight shape, and the
flattening order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import BridgeConfigError, frame_paths, load_frame, points_inside_box
from .model import MockDetector, load_checkpoint, weighted_layers


@dataclass
class ExportConfig:
    checkpoint: str
    data_dir: str
    out_path: str
    gradient_layer: str
    m_passes: int = 5
    dropout_rate: float = 0.3
    class_map: dict[str, int] = field(default_factory=dict)
    seed: int = 0

    def validate(self) -> None:
        if self.m_passes < 1:
            raise BridgeConfigError(f"m_passes must be >= 1, got {self.m_passes}")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise BridgeConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")


def _resolve_class_map(cfg: ExportConfig, class_names: list[str]) -> dict[str, int]:
    if not cfg.class_map:
        return {name: i for i, name in enumerate(class_names)}
    missing = [n for n in class_names if n not in cfg.class_map]
    if missing:
        raise BridgeConfigError(
            f"class map does not cover detector classes {missing}; "
            f"detector emits {class_names}"
        )
    return dict(cfg.class_map)


def _detect(model: MockDetector, points: torch.Tensor, conf_threshold: float):
    """Deterministic forward pass: indices, labels, confidences, boxes."""
    with torch.no_grad():
        logits, boxes = model(points)
        probs = torch.softmax(logits, dim=1)
    fg_probs = probs[:, :-1]
    conf, labels = fg_probs.max(dim=1)
    background = probs.argmax(dim=1) == model.num_classes
    keep = (~background) & (conf >= conf_threshold)
    idx = torch.nonzero(keep).flatten()
    return idx, labels[idx], conf[idx], boxes[idx]


def _mc_passes(model: MockDetector, points: torch.Tensor, idx: torch.Tensor,
               m_passes: int) -> torch.Tensor:
    """M stochastic passes over the selected slots, dropout enabled."""
    for module in model.dropout_modules():
        module.train()
    passes = []
    with torch.no_grad():
        for _ in range(m_passes):
            _, boxes = model(points)
            passes.append(boxes[idx])
    model.eval()
    return torch.stack(passes) if passes else torch.zeros(m_passes, 0, 7)


def _layer_gradient(model: MockDetector, points: torch.Tensor, idx: torch.Tensor,
                    hypothetical: torch.Tensor, layer_name: str) -> np.ndarray:
    layers = weighted_layers(model)
    if layer_name not in layers:
        raise BridgeConfigError(
            f"layer {layer_name!r} not found; available layers: {sorted(layers)}"
        )
    weight = layers[layer_name].weight
    model.zero_grad(set_to_none=True)
    _, boxes = model(points)
    if len(idx) == 0:
        return np.zeros(weight.numel(), dtype=np.float64)
    loss = torch.nn.functional.smooth_l1_loss(
        boxes[idx], hypothetical.detach(), reduction="sum"
    )
    (grad,) = torch.autograd.grad(loss, weight, allow_unused=True)
    if grad is None:
        raise BridgeConfigError(
            f"layer {layer_name!r} does not feed the regression path; "
            f"pick one of {sorted(layers)}"
        )
    return grad.detach().reshape(-1).to(torch.float64).numpy()


def _record_obj(cloud_id: str, labels, confs, boxes, densities, passes,
                embedding) -> dict:
    return {
        "cloud_id": cloud_id,
        "boxes": [
            {
                "class_id": int(labels[k]),
                "confidence": float(confs[k]),
                "box7": [float(v) for v in boxes[k]],
                "point_density": float(densities[k]),
            }
            for k in range(len(labels))
        ],
        "mc_passes": passes.tolist(),
        "gradient_embedding": [float(v) for v in embedding],
    }


def export_pool(cfg: ExportConfig) -> dict:
    """Run the exporter; returns summary counts (frames, records, boxes)."""
    cfg.validate()
    model, meta = load_checkpoint(cfg.checkpoint)
    model.set_dropout_rate(cfg.dropout_rate)
    class_map = _resolve_class_map(cfg, meta["class_names"])
    layers = weighted_layers(model)
    if cfg.gradient_layer not in layers:
        raise BridgeConfigError(
            f"layer {cfg.gradient_layer!r} not found; available layers: {sorted(layers)}"
        )
    torch.manual_seed(cfg.seed)

    paths = frame_paths(cfg.data_dir)
    out_path = Path(cfg.out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    total_boxes = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for path in paths:
            points_np = load_frame(path)
            points = torch.from_numpy(points_np)
            idx, labels_raw, confs, boxes = _detect(model, points, meta["conf_threshold"])
            labels = [
                class_map[meta["class_names"][int(label)]] for label in labels_raw
            ]
            boxes_np = boxes.numpy()
            densities = [points_inside_box(points_np, box) for box in boxes_np]
            passes = _mc_passes(model, points, idx, cfg.m_passes)
            hypothetical = passes.mean(dim=0)
            embedding = _layer_gradient(model, points, idx, hypothetical,
                                        cfg.gradient_layer)
            obj = _record_obj(path.stem, labels, confs.numpy(), boxes_np,
                              densities, passes.numpy(), embedding)
            fh.write(json.dumps(obj, sort_keys=True, separators=(",", ":")))
            fh.write("\n")
            total_boxes += len(labels)

    weight_shape = list(layers[cfg.gradient_layer].weight.shape)
    meta_doc = {
        "gradient_layer": cfg.gradient_layer,
        "weight_shape": weight_shape,
        "flattening": "row-major",
        "embedding_dim": int(np.prod(weight_shape)),
        "m_passes": cfg.m_passes,
        "dropout_rate": cfg.dropout_rate,
        "class_map": class_map,
        "frames": len(paths),
    }
    meta_path = out_path.with_name(out_path.name + ".meta.json")
    meta_path.write_text(json.dumps(meta_doc, sort_keys=True, indent=2) + "\n",
                         encoding="utf-8")
    return {"frames": len(paths), "records": len(paths), "boxes": total_boxes,
            "out": str(out_path), "meta": str(meta_path)}
