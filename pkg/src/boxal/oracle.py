"""Annotation oracle with per-box budget accounting.

The oracle is the only component allowed to read ground truth. Annotation
cost is counted in boxes; when a request would exceed the remaining budget
the round is truncated at the budget boundary, in request order, and the
unannotated suffix is reported back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import IntegrityError
from .records import PoolRecord
from .synthetic import PoolState, SyntheticScene, TrueBox


def oracle_box_count(record: PoolRecord) -> int | None:
    """Sanctioned reader of the record's oracle-only ground-truth box count."""
    return record._gt_box_count


@dataclass
class BudgetLedger:
    budget_boxes: float = math.inf
    spent: int = 0
    per_round: list[int] = field(default_factory=list)

    def remaining(self) -> float:
        return self.budget_boxes - self.spent

    def charge(self, cost: int) -> None:
        if cost > self.remaining():
            raise IntegrityError("attempted to charge beyond the annotation budget")
        self.spent += cost
        self.per_round.append(cost)


@dataclass(frozen=True)
class Annotation:
    cloud_id: str
    true_boxes: tuple[TrueBox, ...]


@dataclass(frozen=True)
class OracleResult:
    annotations: tuple[Annotation, ...]
    cost: int
    truncated: bool
    skipped_ids: tuple[str, ...]


class AnnotationOracle:
    """Delivers ground-truth boxes for requested clouds and tracks spend."""

    def __init__(self, state: PoolState, budget_boxes: float = math.inf):
        if budget_boxes < 0:
            raise IntegrityError(f"budget must be nonnegative, got {budget_boxes}")
        self._state = state
        self.ledger = BudgetLedger(budget_boxes=budget_boxes)
        self._annotated: set[str] = set()

    @property
    def annotated_ids(self) -> set[str]:
        return set(self._annotated)

    def annotate(self, ids: list[str], charge_budget: bool = True) -> OracleResult:
        """Annotate ids in order until the budget boundary.

        Duplicate ids within a call, or ids annotated in an earlier call,
        raise IntegrityError; the initial labeled set is delivered with
        ``charge_budget=False`` and does not consume budget.
        """
        if len(set(ids)) != len(ids):
            raise IntegrityError("annotation request contains repeated ids")
        already = [cid for cid in ids if cid in self._annotated]
        if already:
            raise IntegrityError(f"cloud {already[0]!r} was already annotated")
        annotations: list[Annotation] = []
        cost = 0
        skipped: list[str] = []
        for pos, cid in enumerate(ids):
            scene = self._scene(cid)
            box_cost = scene.gt_box_count
            if charge_budget and self.ledger.spent + cost + box_cost > self.ledger.budget_boxes:
                skipped = list(ids[pos:])
                break
            annotations.append(Annotation(cloud_id=cid, true_boxes=scene.true_boxes))
            cost += box_cost
        if charge_budget:
            self.ledger.charge(cost)
        for ann in annotations:
            self._annotated.add(ann.cloud_id)
        return OracleResult(
            annotations=tuple(annotations),
            cost=cost,
            truncated=bool(skipped),
            skipped_ids=tuple(skipped),
        )

    def _scene(self, cloud_id: str) -> SyntheticScene:
        try:
            return self._state.scene_by_id(cloud_id)
        except KeyError:
            raise IntegrityError(f"unknown cloud_id {cloud_id!r}") from None
