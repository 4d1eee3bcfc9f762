"""Bundled mock 3D detector: a small anchor-based torch network with the
shape real detectors share (local point pooling per anchor slot, a shared
block with dropout, class and box heads).

Each slot owns a fixed spatial anchor and pools statistics of the points
near it; the heads score ``num_classes + 1`` labels per slot (the last one
is background) and regress a 7-DOF box around the anchor. ``save_checkpoint``
trains the network briefly on synthetic cluster frames so detections are
input-dependent; any module exposing the same forward contract can be
exported the same way.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import torch
from torch import nn

BOX_DOF = 7
DEFAULT_CLASS_NAMES = ("Car", "Pedestrian", "Cyclist", "Van", "Truck")

ANCHOR_RADIUS = 16.0
LOCAL_DIM = 8  # count, mean offset (3), point std (3), mean intensity


def _anchor_grid(slots: int) -> torch.Tensor:
    cols = (slots + 1) // 2
    xs = torch.linspace(-20.0, 20.0, cols)
    anchors = [(float(x), -12.0) for x in xs] + [(float(x), 12.0) for x in xs]
    return torch.tensor(anchors[:slots], dtype=torch.float32)


class MockDetector(nn.Module):
    def __init__(self, num_classes: int, slots: int = 8, hidden: int = 64,
                 dropout: float = 0.3):
        super().__init__()
        self.num_classes = num_classes
        self.slots = slots
        self.register_buffer("anchors", _anchor_grid(slots))
        self.encoder = nn.Sequential(
            nn.Linear(LOCAL_DIM, 32), nn.Tanh(),
            nn.Linear(32, hidden), nn.Tanh(),
        )
        self.shared = nn.Sequential(
            nn.Linear(hidden, hidden), nn.Tanh(), nn.Dropout(dropout),
            nn.Linear(hidden, hidden), nn.Tanh(),
        )
        self.cls_head = nn.Linear(hidden, num_classes + 1)
        self.reg_head = nn.Linear(hidden, BOX_DOF)

    def _local_stats(self, points: torch.Tensor) -> torch.Tensor:
        """(slots, LOCAL_DIM) pooled statistics of the points near each anchor."""
        stats = torch.zeros(self.slots, LOCAL_DIM)
        if points.numel() == 0:
            return stats
        xy = points[:, :2]
        for i in range(self.slots):
            offsets = xy - self.anchors[i]
            mask = offsets.norm(dim=1) < ANCHOR_RADIUS
            local = points[mask]
            if len(local) == 0:
                continue
            rel = local[:, :3] - torch.cat([self.anchors[i], torch.zeros(1)])
            stats[i, 0] = math.log1p(len(local)) / 6.0
            stats[i, 1:4] = rel.mean(dim=0) / ANCHOR_RADIUS
            stats[i, 4:7] = local[:, :3].std(dim=0, unbiased=False) / ANCHOR_RADIUS
            stats[i, 7] = local[:, 3].mean()
        return stats

    def forward(self, points: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """points: (N, 4) -> (class logits (slots, C+1), boxes (slots, 7))."""
        slot_feats = self.shared(self.encoder(self._local_stats(points)))
        logits = self.cls_head(slot_feats)
        raw = self.reg_head(slot_feats)
        center_xy = self.anchors + raw[:, :2] * ANCHOR_RADIUS
        center_z = raw[:, 2:3] * 2.0
        sizes = nn.functional.softplus(raw[:, 3:6]) * 4.0 + 0.5
        yaw = raw[:, 6:] * math.pi
        boxes = torch.cat([center_xy, center_z, sizes, yaw], dim=1)
        return logits, boxes

    def set_dropout_rate(self, rate: float) -> None:
        for module in self.modules():
            if isinstance(module, nn.Dropout):
                module.p = rate

    def dropout_modules(self) -> list[nn.Dropout]:
        return [m for m in self.modules() if isinstance(m, nn.Dropout)]


def weighted_layers(model: nn.Module) -> dict[str, nn.Module]:
    """Named submodules carrying a weight tensor, the valid gradient taps."""
    return {
        name: module
        for name, module in model.named_modules()
        if hasattr(module, "weight") and isinstance(getattr(module, "weight"), torch.Tensor)
    }


def _train_mock(model: MockDetector, seed: int, steps: int) -> None:
    """Teach the mock to detect point clusters.

    Every cluster is assigned to its nearest anchor slot (largest cluster
    wins a contested slot); the slot learns the cluster's point-count class
    tier and a box around it, other slots learn background.
    """
    from .data import cluster_class, sample_frame

    rng = np.random.default_rng(seed)
    frames = [sample_frame(rng) for _ in range(48)]
    optimizer = torch.optim.Adam(model.parameters(), lr=4e-3)
    background = model.num_classes
    anchors = model.anchors.numpy()
    model.train()
    for step in range(steps):
        points, clusters = frames[step % len(frames)]
        logits, boxes = model(torch.from_numpy(points))
        cls_target = torch.full((model.slots,), background, dtype=torch.long)
        assigned: dict[int, object] = {}
        for cluster in clusters:
            slot = int(np.linalg.norm(anchors - np.asarray(cluster.center[:2]), axis=1).argmin())
            if slot not in assigned or cluster.n_points > assigned[slot].n_points:
                assigned[slot] = cluster
        reg_loss = torch.zeros(())
        for slot, cluster in assigned.items():
            cls_target[slot] = cluster_class(cluster, model.num_classes)
            size = 4.0 * cluster.sigma
            target = torch.tensor(
                list(cluster.center) + [size, size, size, 0.0], dtype=boxes.dtype
            )
            reg_loss = reg_loss + torch.nn.functional.smooth_l1_loss(boxes[slot], target)
        # Foreground classes upweighted: most slots are background.
        weights = torch.ones(model.num_classes + 1)
        weights[background] = 0.3
        cls_loss = torch.nn.functional.cross_entropy(logits, cls_target, weight=weights)
        optimizer.zero_grad()
        (cls_loss + 0.4 * reg_loss).backward()
        optimizer.step()
    model.eval()


def save_checkpoint(path: str | Path, num_classes: int = 3, slots: int = 8,
                    conf_threshold: float = 0.45, seed: int = 0,
                    train_steps: int = 900) -> Path:
    """Write the bundled mock checkpoint (briefly trained, see _train_mock)."""
    torch.manual_seed(seed)
    model = MockDetector(num_classes=num_classes, slots=slots)
    _train_mock(model, seed=seed, steps=train_steps)
    payload = {
        "state_dict": model.state_dict(),
        "num_classes": num_classes,
        "slots": slots,
        "conf_threshold": conf_threshold,
        "class_names": list(DEFAULT_CLASS_NAMES[:num_classes]),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | Path) -> tuple[MockDetector, dict]:
    payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    model = MockDetector(num_classes=int(payload["num_classes"]),
                         slots=int(payload["slots"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    meta = {
        "num_classes": int(payload["num_classes"]),
        "conf_threshold": float(payload["conf_threshold"]),
        "class_names": [str(n) for n in payload["class_names"]],
    }
    return model, meta
