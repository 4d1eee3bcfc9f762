"""Frame dataset: one .npz point cloud per frame, iterated in name order."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class BridgeError(Exception):
    pass


class BridgeConfigError(BridgeError):
    pass


def frame_paths(data_dir: str | Path) -> list[Path]:
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise BridgeConfigError(f"dataset directory not found: {data_dir}")
    paths = sorted(data_dir.glob("*.npz"))
    if not paths:
        raise BridgeConfigError(f"no .npz frames in {data_dir}")
    return paths


def load_frame(path: Path) -> np.ndarray:
    with np.load(path) as data:
        if "points" not in data:
            raise BridgeError(f"{path} has no 'points' array")
        points = np.asarray(data["points"], dtype=np.float32)
    if points.ndim != 2 or points.shape[1] != 4:
        raise BridgeError(f"{path}: points must have shape (N, 4), got {points.shape}")
    return points


@dataclass(frozen=True)
class Cluster:
    center: tuple[float, float, float]
    sigma: float
    n_points: int


def sample_frame(rng: np.random.Generator) -> tuple[np.ndarray, list[Cluster]]:
    """One synthetic frame: 0-4 Gaussian object clusters over ground noise.

    Clusters are returned sorted by x so callers can pair them with detector
    slots deterministically.
    """
    clusters = []
    blobs = []
    for _ in range(int(rng.integers(0, 5))):
        center = rng.uniform([-25, -25, -1.0], [25, 25, 0.5])
        sigma = float(rng.uniform(0.5, 1.2))
        n = int(rng.integers(30, 300))
        pts = rng.normal(0.0, sigma, size=(n, 3)) + center
        intensity = rng.uniform(0, 1, size=(n, 1))
        blobs.append(np.hstack([pts, intensity]).astype(np.float32))
        clusters.append(Cluster(center=tuple(float(v) for v in center),
                                sigma=sigma, n_points=n))
    n_ground = int(rng.integers(100, 400))
    ground = np.hstack([
        rng.uniform([-40, -40, -2.0], [40, 40, -1.6], size=(n_ground, 3)),
        rng.uniform(0, 1, size=(n_ground, 1)),
    ]).astype(np.float32)
    points = np.vstack(blobs + [ground]) if blobs else ground
    order = np.argsort([c.center[0] for c in clusters]) if clusters else []
    return points, [clusters[i] for i in order]


def cluster_class(cluster: Cluster, num_classes: int) -> int:
    """Point-count tiers: big dense clusters are class 0, sparse ones last."""
    tiers = [220, 120]
    for cls, bound in enumerate(tiers[: max(num_classes - 1, 0)]):
        if cluster.n_points >= bound:
            return cls
    return min(len(tiers), num_classes - 1)


def make_mock_dataset(out_dir: str | Path, frames: int = 12, seed: int = 0) -> list[Path]:
    """Synthetic point-cloud frames written one .npz per frame."""
    rng = np.random.default_rng(seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for i in range(frames):
        points, _ = sample_frame(rng)
        path = out_dir / f"frame_{i:05d}.npz"
        np.savez_compressed(path, points=points)
        written.append(path)
    return written


def points_inside_box(points: np.ndarray, box7) -> int:
    """Count points whose coordinates fall inside the yaw-oriented box."""
    if len(points) == 0:
        return 0
    cx, cy, cz, l, w, h, yaw = box7
    shifted = points[:, :3] - np.array([cx, cy, cz])
    cos, sin = np.cos(-yaw), np.sin(-yaw)
    local_x = shifted[:, 0] * cos - shifted[:, 1] * sin
    local_y = shifted[:, 0] * sin + shifted[:, 1] * cos
    inside = (
        (np.abs(local_x) <= l / 2)
        & (np.abs(local_y) <= w / 2)
        & (np.abs(shifted[:, 2]) <= h / 2)
    )
    return int(inside.sum())
