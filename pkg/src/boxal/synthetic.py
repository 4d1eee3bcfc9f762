"""Synthetic pool generation and the linear surrogate detector.

A scene holds ground-truth boxes; the surrogate "detects" every true box
through a fixed noisy observation (a per-box feature vector) and a linear
regression head. MC-dropout passes rerun the head with Bernoulli feature
masks, and each record's gradient embedding is computed against the mean of
its own passes, exactly as the selection engine would. Per-class box
densities are lognormal with distinct medians so near/far objects separate
by class, and class abundances default to a long-tailed profile.

Regenerating records under a refit head only redraws dropout masks; the
observation features, predicted labels, confidences, and recorded densities
are drawn once so the loop's refits change only what the head controls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import StrategyConfig
from .errors import ConfigError
from .gradients import FEATURE_DIM, surrogate_gradient
from .records import BOX_DOF, BoxPrediction, PoolRecord

MIN_BOX_DIM = 0.01

_SIZE_TEMPLATES = [
    (4.2, 1.8, 1.6),
    (0.8, 0.8, 1.75),
    (1.8, 0.7, 1.7),
    (2.4, 1.2, 1.8),
]


@dataclass(frozen=True)
class ClassSpec:
    """One object class: its share of all boxes, how busy its scenes are,
    and its box point-density distribution (lognormal)."""

    weight: float
    boxes_mean: float
    density_log_mean: float
    density_log_sigma: float
    size_mean: tuple[float, float, float]


@dataclass(frozen=True)
class SceneSpec:
    """Scene model: every cloud has a dominant class drawn so that the global
    box-class shares equal the configured weights exactly, while busier
    dominant classes produce larger clouds. ``scene_purity`` is the chance a
    box takes the scene's dominant class rather than a background draw."""

    classes: tuple[ClassSpec, ...]
    scene_purity: float = 1.0
    position_range: float = 40.0
    observation_noise: float = 0.15
    density_noise: float = 0.1
    label_accuracy: float = 0.99

    def validate(self) -> None:
        if not self.classes:
            raise ConfigError("scene spec needs at least one class")
        total = sum(c.weight for c in self.classes)
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"class weights must sum to 1, got {total}")
        for c in self.classes:
            if c.weight < 0:
                raise ConfigError("class weights must be nonnegative")
            if c.boxes_mean <= 0:
                raise ConfigError("boxes_mean must be > 0")
            if c.density_log_sigma <= 0:
                raise ConfigError("density_log_sigma must be > 0")
        if not (0.0 < self.scene_purity <= 1.0):
            raise ConfigError("scene_purity must be in (0, 1]")
        if not (0.0 < self.label_accuracy <= 1.0):
            raise ConfigError("label_accuracy must be in (0, 1]")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.classes], dtype=np.float64)

    def scene_type_probs(self) -> np.ndarray:
        """Dominant-class draw: proportional to weight / boxes_mean, which makes
        the expected global box-class shares equal the weights for any sizes."""
        raw = np.array([c.weight / c.boxes_mean for c in self.classes])
        return raw / raw.sum()

    def confusion_matrix(self) -> np.ndarray:
        """Row-stochastic label confusion; errors go to adjacent class ids only,
        mirroring detectors that mix up size-adjacent categories."""
        c = self.num_classes
        if c == 1:
            return np.ones((1, 1))
        acc = self.label_accuracy
        mat = np.zeros((c, c))
        for i in range(c):
            neighbors = [j for j in (i - 1, i + 1) if 0 <= j < c]
            mat[i, i] = acc
            for j in neighbors:
                mat[i, j] = (1.0 - acc) / len(neighbors)
        return mat


def default_scene_spec(
    num_classes: int,
    abundance: tuple[float, ...] | None = None,
    boxes_mean: float = 4.5,
) -> SceneSpec:
    """Long-tailed default pool.

    Scene sizes track class abundance (majority-class scenes are busier, so
    rare classes spread over many small scenes), and per-class density
    medians are spaced with widths large relative to the default bandwidth,
    so balancing has signal throughout a selection round. ``boxes_mean``
    sets the busiest class's scene size.
    """
    if num_classes < 1:
        raise ConfigError(f"num_classes must be >= 1, got {num_classes}")
    if abundance is None:
        raw = np.array([0.25**c for c in range(num_classes)])
        abundance = tuple(raw / raw.sum())
    if len(abundance) != num_classes:
        raise ConfigError(f"abundance needs {num_classes} entries, got {len(abundance)}")
    if any(w <= 0 for w in abundance):
        raise ConfigError("default spec needs strictly positive abundances")
    sizes = [
        max(boxes_mean * (abundance[c] / abundance[0]), 0.25)
        for c in range(num_classes)
    ]
    medians = [1200.0 * (0.6**c) for c in range(num_classes)]
    sigmas = [min(0.25 * (1.4**c), 0.9) for c in range(num_classes)]
    classes = tuple(
        ClassSpec(
            weight=float(abundance[c]),
            boxes_mean=float(sizes[c]),
            density_log_mean=math.log(medians[c]),
            density_log_sigma=float(sigmas[c]),
            size_mean=_SIZE_TEMPLATES[c % len(_SIZE_TEMPLATES)],
        )
        for c in range(num_classes)
    )
    spec = SceneSpec(classes=classes)
    spec.validate()
    return spec


def scene_spec_to_obj(spec: SceneSpec) -> dict:
    return {
        "classes": [
            {
                "weight": c.weight,
                "boxes_mean": c.boxes_mean,
                "density_log_mean": c.density_log_mean,
                "density_log_sigma": c.density_log_sigma,
                "size_mean": list(c.size_mean),
            }
            for c in spec.classes
        ],
        "scene_purity": spec.scene_purity,
        "position_range": spec.position_range,
        "observation_noise": spec.observation_noise,
        "density_noise": spec.density_noise,
        "label_accuracy": spec.label_accuracy,
    }


def scene_spec_from_obj(obj: dict) -> SceneSpec:
    try:
        classes = tuple(
            ClassSpec(
                weight=float(c["weight"]),
                boxes_mean=float(c["boxes_mean"]),
                density_log_mean=float(c["density_log_mean"]),
                density_log_sigma=float(c["density_log_sigma"]),
                size_mean=tuple(float(v) for v in c["size_mean"]),
            )
            for c in obj["classes"]
        )
        spec = SceneSpec(
            classes=classes,
            scene_purity=float(obj.get("scene_purity", 1.0)),
            position_range=float(obj.get("position_range", 40.0)),
            observation_noise=float(obj.get("observation_noise", 0.15)),
            density_noise=float(obj.get("density_noise", 0.1)),
            label_accuracy=float(obj.get("label_accuracy", 0.99)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed scene spec: {exc}") from None
    spec.validate()
    return spec


@dataclass(frozen=True)
class TrueBox:
    class_id: int
    box7: tuple[float, ...]
    point_density: float


@dataclass(frozen=True)
class SyntheticScene:
    cloud_id: str
    true_boxes: tuple[TrueBox, ...]

    @property
    def gt_box_count(self) -> int:
        return len(self.true_boxes)


@dataclass
class PoolState:
    """Scenes plus the fixed per-box draws the surrogate detector made once."""

    spec: SceneSpec
    scenes: list[SyntheticScene]
    observations: dict[str, np.ndarray] = field(default_factory=dict)
    pred_labels: dict[str, np.ndarray] = field(default_factory=dict)
    confidences: dict[str, np.ndarray] = field(default_factory=dict)
    rec_densities: dict[str, np.ndarray] = field(default_factory=dict)

    def scene_by_id(self, cloud_id: str) -> SyntheticScene:
        return self._index[cloud_id]

    def __post_init__(self) -> None:
        self._index = {s.cloud_id: s for s in self.scenes}


def initial_params() -> np.ndarray:
    """Head that reads the box parameters straight out of the feature vector."""
    w = np.zeros((BOX_DOF, FEATURE_DIM))
    w[:, :BOX_DOF] = np.eye(BOX_DOF)
    return w


def generate_state(n: int, spec: SceneSpec, rng: np.random.Generator) -> PoolState:
    """Sample n scenes and the surrogate's fixed observations of them."""
    if n < 1:
        raise ConfigError(f"pool size must be >= 1, got {n}")
    spec.validate()
    weights = spec.weights()
    type_probs = spec.scene_type_probs()
    confusion = spec.confusion_matrix()
    num_classes = spec.num_classes
    scenes: list[SyntheticScene] = []
    state = PoolState(spec=spec, scenes=scenes)
    for i in range(n):
        cloud_id = f"c{i:06d}"
        dominant = int(rng.choice(num_classes, p=type_probs))
        n_b = int(rng.poisson(spec.classes[dominant].boxes_mean))
        if n_b:
            background = rng.random(n_b) >= spec.scene_purity
            class_ids = np.where(
                background, rng.choice(num_classes, size=n_b, p=weights), dominant
            )
        else:
            class_ids = np.zeros(0, int)
        boxes = []
        box7s = np.zeros((n_b, BOX_DOF))
        densities = np.zeros(n_b)
        for k in range(n_b):
            c = int(class_ids[k])
            center = np.array(
                [
                    rng.uniform(-spec.position_range, spec.position_range),
                    rng.uniform(-spec.position_range, spec.position_range),
                    rng.uniform(-2.0, 0.5),
                ]
            )
            size = np.array(spec.classes[c].size_mean) * np.exp(rng.normal(0.0, 0.15, 3))
            theta = rng.uniform(-math.pi, math.pi)
            density = float(
                rng.lognormal(spec.classes[c].density_log_mean, spec.classes[c].density_log_sigma)
            )
            box7s[k] = np.concatenate([center, size, [theta]])
            densities[k] = density
            boxes.append(TrueBox(class_id=c, box7=tuple(float(v) for v in box7s[k]),
                                 point_density=density))
        scene = SyntheticScene(cloud_id=cloud_id, true_boxes=tuple(boxes))
        scenes.append(scene)
        state._index[cloud_id] = scene

        obs_box7 = box7s + rng.normal(0.0, spec.observation_noise, size=(n_b, BOX_DOF))
        obs_phi = densities * np.exp(rng.normal(0.0, spec.density_noise, size=n_b))
        feats = np.concatenate(
            [obs_box7, np.log1p(obs_phi)[:, None], np.ones((n_b, 1))], axis=1
        ) if n_b else np.zeros((0, FEATURE_DIM))
        labels = np.array(
            [rng.choice(num_classes, p=confusion[int(c)]) for c in class_ids], dtype=np.int64
        )
        state.observations[cloud_id] = feats
        state.pred_labels[cloud_id] = labels
        state.confidences[cloud_id] = rng.uniform(0.3, 1.0, size=n_b)
        state.rec_densities[cloud_id] = np.maximum(obs_phi, 0.0)
    return state


def build_record(
    state: PoolState,
    cloud_id: str,
    params: np.ndarray,
    dropout_rate: float,
    m_passes: int,
    rng: np.random.Generator,
) -> PoolRecord:
    feats = state.observations[cloud_id]
    n_b = feats.shape[0]
    preds = feats @ params.T
    keep = 1.0 - dropout_rate
    masks = (rng.random((m_passes, n_b, FEATURE_DIM)) < keep).astype(np.float64)
    passes = np.einsum("mbf,cf->mbc", feats * masks / keep, params)
    boxes = []
    labels = state.pred_labels[cloud_id]
    confs = state.confidences[cloud_id]
    densities = state.rec_densities[cloud_id]
    for k in range(n_b):
        box7 = preds[k].copy()
        box7[3:6] = np.maximum(box7[3:6], MIN_BOX_DIM)
        boxes.append(
            BoxPrediction(
                class_id=int(labels[k]),
                confidence=float(confs[k]),
                box7=tuple(float(v) for v in box7),
                point_density=float(densities[k]),
            )
        )
    bare = PoolRecord(
        cloud_id=cloud_id,
        boxes=tuple(boxes),
        mc_passes=passes,
        _gt_box_count=state.scene_by_id(cloud_id).gt_box_count,
    )
    embedding = surrogate_gradient(bare, params)
    return PoolRecord(
        cloud_id=cloud_id,
        boxes=bare.boxes,
        mc_passes=passes,
        gradient_embedding=embedding,
        _gt_box_count=bare._gt_box_count,
    )


def build_records(
    state: PoolState,
    params: np.ndarray,
    cfg: StrategyConfig,
    rng: np.random.Generator,
    ids: list[str] | None = None,
) -> list[PoolRecord]:
    """Records for the given ids (ascending id order keeps the rng stream stable)."""
    if ids is None:
        ids = [s.cloud_id for s in state.scenes]
    return [
        build_record(state, cid, params, cfg.dropout_rate, cfg.mc_passes, rng)
        for cid in sorted(ids)
    ]


def generate_pool(
    n: int, spec: SceneSpec, seed: int, cfg: StrategyConfig
) -> tuple[PoolState, list[PoolRecord]]:
    """Scenes plus records as seen by the untrained (identity) surrogate head."""
    rng = np.random.default_rng(seed)
    state = generate_state(n, spec, rng)
    records = build_records(state, initial_params(), cfg, rng)
    return state, records


def state_to_obj(state: PoolState) -> dict:
    """Oracle-side scenes document: ground truth plus the fixed detector draws."""
    return {
        "spec": scene_spec_to_obj(state.spec),
        "scenes": [
            {
                "cloud_id": s.cloud_id,
                "true_boxes": [
                    {"class_id": b.class_id, "box7": list(b.box7),
                     "point_density": b.point_density}
                    for b in s.true_boxes
                ],
                "observations": state.observations[s.cloud_id].tolist(),
                "pred_labels": state.pred_labels[s.cloud_id].tolist(),
                "confidences": state.confidences[s.cloud_id].tolist(),
                "rec_densities": state.rec_densities[s.cloud_id].tolist(),
            }
            for s in state.scenes
        ],
    }


def state_from_obj(obj: dict) -> PoolState:
    try:
        spec = scene_spec_from_obj(obj["spec"])
        scenes: list[SyntheticScene] = []
        state = PoolState(spec=spec, scenes=scenes)
        for raw in obj["scenes"]:
            cid = str(raw["cloud_id"])
            boxes = tuple(
                TrueBox(
                    class_id=int(b["class_id"]),
                    box7=tuple(float(v) for v in b["box7"]),
                    point_density=float(b["point_density"]),
                )
                for b in raw["true_boxes"]
            )
            scene = SyntheticScene(cloud_id=cid, true_boxes=boxes)
            scenes.append(scene)
            state._index[cid] = scene
            n_b = len(boxes)
            obs = np.asarray(raw["observations"], dtype=np.float64)
            state.observations[cid] = obs.reshape(n_b, FEATURE_DIM)
            state.pred_labels[cid] = np.asarray(raw["pred_labels"], dtype=np.int64)
            state.confidences[cid] = np.asarray(raw["confidences"], dtype=np.float64)
            state.rec_densities[cid] = np.asarray(raw["rec_densities"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed scenes document: {exc}") from None
    return state
