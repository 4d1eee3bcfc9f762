import numpy as np

from boxal.records import BoxPrediction, PoolRecord


def make_box(class_id=0, confidence=0.8, box7=None, density=10.0):
    if box7 is None:
        box7 = (1.0, 2.0, -0.5, 4.0, 1.8, 1.5, 0.3)
    return BoxPrediction(
        class_id=class_id, confidence=confidence, box7=tuple(box7), point_density=density
    )


def make_record(
    cloud_id,
    class_ids=(),
    densities=None,
    mc_passes=None,
    embedding=None,
    gt_count=None,
    rng=None,
):
    """Record with one default-geometry box per class id. Densities optional."""
    rng = rng or np.random.default_rng(0)
    boxes = []
    for i, cid in enumerate(class_ids):
        density = 10.0 * (i + 1) if densities is None else densities[i]
        box7 = (
            float(rng.uniform(-20, 20)),
            float(rng.uniform(-20, 20)),
            float(rng.uniform(-2, 0.5)),
            4.0, 1.8, 1.5,
            float(rng.uniform(-3, 3)),
        )
        boxes.append(make_box(class_id=cid, box7=box7, density=density))
    if mc_passes is not None:
        mc_passes = np.asarray(mc_passes, dtype=np.float64)
    if embedding is not None:
        embedding = np.asarray(embedding, dtype=np.float64)
    return PoolRecord(
        cloud_id=cloud_id,
        boxes=tuple(boxes),
        mc_passes=mc_passes,
        gradient_embedding=embedding,
        _gt_box_count=gt_count,
    )
