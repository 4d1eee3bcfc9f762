"""Pool record model: domain types, validation, and bit-exact JSON I/O.

A pool file is UTF-8 JSON Lines, one record per line. A selection file is a
single JSON document per round. Serialization is canonical (sorted keys,
fixed separators, shortest round-trip float repr), so two serializations of
equal objects are byte-identical and deserialize(serialize(x)) == x.

The ``_gt_box_count`` attribute is oracle-visible bookkeeping: it rides along
in the file format but selection strategies must not read it. Only the
annotation oracle accesses it, via :func:`boxal.oracle.oracle_box_count`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

import numpy as np

from .errors import IntegrityError, PoolParseError, PoolSchemaError

BOX_DOF = 7


@dataclass(frozen=True)
class BoxPrediction:
    """One predicted 7-DOF box with class label, confidence, and point density."""

    class_id: int
    confidence: float
    box7: tuple[float, ...]
    point_density: float

    def validate(self, num_classes: int | None = None) -> None:
        if not isinstance(self.class_id, int) or self.class_id < 0:
            raise PoolSchemaError(f"class_id must be a nonnegative integer, got {self.class_id!r}")
        if num_classes is not None and self.class_id >= num_classes:
            raise PoolSchemaError(
                f"class_id {self.class_id} out of range for {num_classes} classes"
            )
        if len(self.box7) != BOX_DOF:
            raise PoolSchemaError(f"box7 must have {BOX_DOF} entries, got {len(self.box7)}")
        if not all(np.isfinite(v) for v in self.box7):
            raise PoolSchemaError("box7 entries must be finite")
        l, w, h = self.box7[3], self.box7[4], self.box7[5]
        if l <= 0 or w <= 0 or h <= 0:
            raise PoolSchemaError(f"box size (l, w, h) must be strictly positive, got {(l, w, h)}")
        if not (np.isfinite(self.confidence) and 0.0 <= self.confidence <= 1.0):
            raise PoolSchemaError(f"confidence must be in [0, 1], got {self.confidence!r}")
        if not (np.isfinite(self.point_density) and self.point_density >= 0.0):
            raise PoolSchemaError(f"point_density must be >= 0, got {self.point_density!r}")


@dataclass(frozen=True, eq=False)
class PoolRecord:
    """Detector outputs for one unlabeled point cloud.

    ``mc_passes`` has shape (M, N_B, 7); ``gradient_embedding`` is a flat
    vector of constant length across a pool. Arrays are frozen after
    construction so records are safe to share across threads.
    """

    cloud_id: str
    boxes: tuple[BoxPrediction, ...]
    mc_passes: np.ndarray | None = None
    gradient_embedding: np.ndarray | None = None
    _gt_box_count: int | None = None

    def __post_init__(self) -> None:
        for arr in (self.mc_passes, self.gradient_embedding):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def n_boxes(self) -> int:
        return len(self.boxes)

    def validate(self, num_classes: int | None = None, mc_pass_count: int | None = None) -> None:
        if not self.cloud_id:
            raise PoolSchemaError("cloud_id must be a non-empty string")
        for box in self.boxes:
            box.validate(num_classes)
        if self.mc_passes is not None:
            if self.mc_passes.ndim != 3 or self.mc_passes.shape[2] != BOX_DOF:
                raise PoolSchemaError(
                    f"mc_passes must have shape (M, N_B, {BOX_DOF}), got {self.mc_passes.shape}"
                )
            if self.mc_passes.shape[1] != self.n_boxes:
                raise PoolSchemaError(
                    f"mc_passes second dimension {self.mc_passes.shape[1]} "
                    f"!= box count {self.n_boxes}"
                )
            if mc_pass_count is not None and self.mc_passes.shape[0] != mc_pass_count:
                raise PoolSchemaError(
                    f"mc_passes has {self.mc_passes.shape[0]} passes, expected {mc_pass_count}"
                )
            if not np.all(np.isfinite(self.mc_passes)):
                raise PoolSchemaError("mc_passes entries must be finite")
        if self.gradient_embedding is not None:
            if self.gradient_embedding.ndim != 1:
                raise PoolSchemaError("gradient_embedding must be a flat vector")
            if not np.all(np.isfinite(self.gradient_embedding)):
                raise PoolSchemaError("gradient_embedding entries must be finite")
        if self._gt_box_count is not None and self._gt_box_count < 0:
            raise PoolSchemaError("gt_box_count must be nonnegative")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PoolRecord):
            return NotImplemented
        return (
            self.cloud_id == other.cloud_id
            and self.boxes == other.boxes
            and _array_eq(self.mc_passes, other.mc_passes)
            and _array_eq(self.gradient_embedding, other.gradient_embedding)
            and self._gt_box_count == other._gt_box_count
        )


def _array_eq(a: np.ndarray | None, b: np.ndarray | None) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return a.shape == b.shape and bool(np.array_equal(a, b))


@dataclass(frozen=True)
class SelectionRound:
    """State of one selection round: chosen ids, stage sizes, budget progress."""

    round_index: int
    selected_ids: tuple[str, ...]
    stage_sizes: tuple[int, int, int]
    boxes_annotated_cumulative: int
    diagnostics: dict[str, float] = field(default_factory=dict)

    def validate(self) -> None:
        s1, s2, s3 = self.stage_sizes
        if not (s1 >= s2 >= s3):
            raise PoolSchemaError(f"stage sizes must be nonincreasing, got {self.stage_sizes}")
        if self.round_index < 0:
            raise PoolSchemaError("round_index must be nonnegative")
        if self.boxes_annotated_cumulative < 0:
            raise PoolSchemaError("boxes_annotated_cumulative must be nonnegative")
        if len(set(self.selected_ids)) != len(self.selected_ids):
            raise IntegrityError("selected_ids contains duplicates")


# --- record (de)serialization ------------------------------------------------

def record_to_obj(record: PoolRecord) -> dict:
    obj: dict = {
        "cloud_id": record.cloud_id,
        "boxes": [
            {
                "class_id": b.class_id,
                "confidence": b.confidence,
                "box7": list(b.box7),
                "point_density": b.point_density,
            }
            for b in record.boxes
        ],
    }
    if record.mc_passes is not None:
        obj["mc_passes"] = record.mc_passes.tolist()
    if record.gradient_embedding is not None:
        obj["gradient_embedding"] = record.gradient_embedding.tolist()
    if record._gt_box_count is not None:
        obj["gt_box_count"] = record._gt_box_count
    return obj


def record_to_line(record: PoolRecord) -> str:
    return json.dumps(record_to_obj(record), sort_keys=True, separators=(",", ":"))


def record_from_obj(obj: dict) -> PoolRecord:
    if not isinstance(obj, dict):
        raise PoolSchemaError("record must be a JSON object")
    try:
        cloud_id = obj["cloud_id"]
        raw_boxes = obj["boxes"]
    except KeyError as exc:
        raise PoolSchemaError(f"record missing required field {exc.args[0]!r}") from None
    if not isinstance(cloud_id, str):
        raise PoolSchemaError("cloud_id must be a string")
    if not isinstance(raw_boxes, list):
        raise PoolSchemaError("boxes must be an array")
    boxes = []
    for rb in raw_boxes:
        try:
            boxes.append(
                BoxPrediction(
                    class_id=int(rb["class_id"]),
                    confidence=float(rb["confidence"]),
                    box7=tuple(float(v) for v in rb["box7"]),
                    point_density=float(rb["point_density"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise PoolSchemaError(f"malformed box object: {exc}") from None
    mc = obj.get("mc_passes")
    mc_arr = None
    if mc is not None:
        try:
            mc_arr = np.asarray(mc, dtype=np.float64)
        except ValueError as exc:
            raise PoolSchemaError(f"ragged mc_passes: {exc}") from None
        if mc_arr.size == 0:
            # JSON cannot carry the trailing dims of an empty tensor; rebuild them.
            mc_arr = mc_arr.reshape(len(mc), len(boxes), BOX_DOF) if len(mc) else None
        elif mc_arr.ndim != 3:
            raise PoolSchemaError(f"mc_passes must be 3-dimensional, got {mc_arr.ndim} dims")
    emb = obj.get("gradient_embedding")
    emb_arr = None
    if emb is not None:
        emb_arr = np.asarray(emb, dtype=np.float64)
    gt = obj.get("gt_box_count")
    record = PoolRecord(
        cloud_id=cloud_id,
        boxes=tuple(boxes),
        mc_passes=mc_arr,
        gradient_embedding=emb_arr,
        _gt_box_count=None if gt is None else int(gt),
    )
    return record


def parse_pool(
    stream: Iterable[str] | IO[str],
    num_classes: int | None = None,
    mc_pass_count: int | None = None,
) -> list[PoolRecord]:
    """Parse and validate a JSON Lines pool stream in file order.

    Raises :class:`PoolParseError` for malformed lines (naming the line),
    :class:`IntegrityError` for duplicate cloud ids, and
    :class:`PoolSchemaError` for dimension mismatches. ``num_classes`` and
    ``mc_pass_count`` enable the config-dependent checks when known.
    """
    records: list[PoolRecord] = []
    seen: set[str] = set()
    embed_dim: int | None = None
    for line_no, line in enumerate(stream, start=1):
        text = line.strip()
        if not text:
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise PoolParseError(line_no, f"invalid JSON ({exc.msg})") from None
        try:
            record = record_from_obj(obj)
            record.validate(num_classes=num_classes, mc_pass_count=mc_pass_count)
        except PoolSchemaError as exc:
            raise PoolSchemaError(f"line {line_no}: {exc}") from None
        if record.cloud_id in seen:
            raise IntegrityError(f"duplicate cloud_id {record.cloud_id!r} at line {line_no}")
        seen.add(record.cloud_id)
        if record.gradient_embedding is not None:
            if embed_dim is None:
                embed_dim = record.gradient_embedding.shape[0]
            elif record.gradient_embedding.shape[0] != embed_dim:
                raise PoolSchemaError(
                    f"line {line_no}: gradient_embedding dimension "
                    f"{record.gradient_embedding.shape[0]} != pool dimension {embed_dim}"
                )
        records.append(record)
    return records


def write_pool(records: Iterable[PoolRecord], fp: IO[str]) -> int:
    count = 0
    for record in records:
        fp.write(record_to_line(record))
        fp.write("\n")
        count += 1
    return count


def iter_pool_file(path) -> Iterator[str]:
    with open(path, "r", encoding="utf-8") as fh:
        yield from fh


# --- selection round (de)serialization ----------------------------------------

def write_selection(rnd: SelectionRound) -> str:
    """Canonical single-document serialization of one round."""
    rnd.validate()
    doc = {
        "round_index": rnd.round_index,
        "selected_ids": list(rnd.selected_ids),
        "stage_sizes": list(rnd.stage_sizes),
        "boxes_annotated_cumulative": rnd.boxes_annotated_cumulative,
        "diagnostics": {k: float(v) for k, v in sorted(rnd.diagnostics.items())},
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def parse_selection(text: str) -> SelectionRound:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PoolParseError(exc.lineno, f"invalid JSON ({exc.msg})") from None
    try:
        rnd = SelectionRound(
            round_index=int(doc["round_index"]),
            selected_ids=tuple(str(s) for s in doc["selected_ids"]),
            stage_sizes=tuple(int(v) for v in doc["stage_sizes"]),
            boxes_annotated_cumulative=int(doc["boxes_annotated_cumulative"]),
            diagnostics={str(k): float(v) for k, v in doc.get("diagnostics", {}).items()},
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise PoolSchemaError(f"malformed selection document: {exc}") from None
    rnd.validate()
    return rnd
