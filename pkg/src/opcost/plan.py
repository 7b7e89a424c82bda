"""Annotated query-plan trees and their JSON serialization.

Operator costs are exclusive: ``opt_cost`` and ``act_cost`` cover the operator
alone, not its subtree. ``act_cost`` is CPU time in milliseconds, ``opt_cost``
is in the optimizer's unitless scale.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional, Union

from .exceptions import MissingActualCostError, PlanError


class OperatorKind(str, Enum):
    TABLE_SCAN = "TableScan"
    INDEX_SCAN = "IndexScan"
    INDEX_SEEK = "IndexSeek"
    FILTER = "Filter"
    SORT = "Sort"
    HASH_JOIN = "HashJoin"
    NESTED_LOOP_JOIN = "NestedLoopJoin"
    MERGE_JOIN = "MergeJoin"
    AGGREGATE = "Aggregate"

    def __str__(self):
        return self.value


# Unknown kind names are kept as plain strings (the "Other" case). A str-valued
# enum member hashes and compares equal to its name, so both forms mix freely
# in sets and dict keys.
Kind = Union[OperatorKind, str]

LEAF_KINDS = frozenset(
    {OperatorKind.TABLE_SCAN, OperatorKind.INDEX_SCAN, OperatorKind.INDEX_SEEK}
)
DEFAULT_BACKBONE = LEAF_KINDS


def kind_from_name(name: str) -> Kind:
    try:
        return OperatorKind(name)
    except ValueError:
        return str(name)


def kind_name(kind: Kind) -> str:
    return kind.value if isinstance(kind, OperatorKind) else str(kind)


def is_leaf(kind: Kind) -> bool:
    return kind in LEAF_KINDS


def check_backbone(backbone: Optional[Iterable[Kind]]) -> frozenset:
    """Normalize a backbone kind set; ``None`` means the leaf-operator default."""
    if backbone is None:
        return DEFAULT_BACKBONE
    if isinstance(backbone, str):
        backbone = [backbone]
    kinds = frozenset(kind_from_name(kind_name(k)) for k in backbone)
    if not kinds:
        raise ValueError("backbone set must not be empty")
    return kinds


@dataclass(frozen=True)
class PlanOperator:
    id: int
    kind: Kind
    opt_cost: float
    est_card_in: float = 0.0
    est_card_out: float = 0.0
    act_cost: Optional[float] = None
    act_card_in: Optional[float] = None
    act_card_out: Optional[float] = None
    children: tuple = ()

    def validate(self):
        if not _nonneg(self.opt_cost):
            raise PlanError(f"negative or non-finite opt_cost {self.opt_cost!r}", self.id)
        if self.act_cost is not None and not _nonneg(self.act_cost):
            raise PlanError(f"negative or non-finite act_cost {self.act_cost!r}", self.id)
        for name in ("est_card_in", "est_card_out", "act_card_in", "act_card_out"):
            value = getattr(self, name)
            if value is not None and not _nonneg(value):
                raise PlanError(f"negative {name} {value!r}", self.id)
        if is_leaf(self.kind) and self.children:
            raise PlanError(f"leaf operator {kind_name(self.kind)} has children", self.id)


def _nonneg(x) -> bool:
    return isinstance(x, (int, float)) and math.isfinite(x) and x >= 0


@dataclass(frozen=True)
class QueryPlan:
    """An operator tree. ``operators`` preserves document order."""

    query_id: str
    root: int
    operators: dict = field(default_factory=dict)
    weight: float = 1.0

    def __post_init__(self):
        validate_plan(self)

    def __iter__(self):
        return iter(self.operators.values())

    def __len__(self):
        return len(self.operators)

    def __getitem__(self, op_id: int) -> PlanOperator:
        return self.operators[op_id]

    def total_opt_cost(self) -> float:
        return sum(op.opt_cost for op in self)

    def total_act_cost(self) -> float:
        return sum(_require_act(op) for op in self)

    def with_operators(self, operators: Iterable[PlanOperator]) -> "QueryPlan":
        return replace(self, operators={op.id: op for op in operators})


def validate_plan(plan: QueryPlan):
    if not (isinstance(plan.weight, (int, float)) and plan.weight > 0 and math.isfinite(plan.weight)):
        raise PlanError(f"plan {plan.query_id!r}: weight must be positive, got {plan.weight!r}")
    ops = plan.operators
    if plan.root not in ops:
        raise PlanError(f"plan {plan.query_id!r}: root {plan.root} not among operators")
    parent = {}
    for op in ops.values():
        op.validate()
        for child in op.children:
            if child == op.id:
                raise PlanError("cycle detected (operator lists itself as child)", op.id)
            if child not in ops:
                raise PlanError(f"dangling child id {child}", op.id)
            if child in parent:
                raise PlanError(
                    f"operator {child} has two parents ({parent[child]} and {op.id})", op.id
                )
            parent[child] = op.id
    if plan.root in parent:
        raise PlanError("cycle detected (root has a parent)", plan.root)
    # every operator must be reachable from the root, otherwise it sits on a cycle
    # or in a detached component
    seen = set()
    stack = [plan.root]
    while stack:
        cur = stack.pop()
        if cur in seen:
            raise PlanError("cycle detected", cur)
        seen.add(cur)
        stack.extend(ops[cur].children)
    for op_id in ops:
        if op_id not in seen:
            if op_id in parent:
                raise PlanError("cycle detected", op_id)
            raise PlanError("operator not reachable from root", op_id)


def _require_act(op: PlanOperator) -> float:
    if op.act_cost is None:
        raise MissingActualCostError("act_cost required but missing", op.id)
    return op.act_cost


def leaf_operators(plan: QueryPlan, backbone=None) -> list:
    """Operators whose kind is in ``backbone``, in document order."""
    kinds = check_backbone(backbone)
    return [op for op in plan if op.kind in kinds]


def internal_operators(plan: QueryPlan, backbone=None) -> list:
    kinds = check_backbone(backbone)
    return [op for op in plan if op.kind not in kinds]


def actual_leaf_cost(plan: QueryPlan, backbone=None) -> float:
    return sum(_require_act(op) for op in leaf_operators(plan, backbone))


def actual_internal_cost(plan: QueryPlan, backbone=None) -> float:
    return sum(_require_act(op) for op in internal_operators(plan, backbone))


# -- serialization -----------------------------------------------------------

_OPTIONAL = ("act_cost", "act_card_in", "act_card_out")


def operator_to_dict(op: PlanOperator) -> dict:
    doc = {
        "id": op.id,
        "kind": kind_name(op.kind),
        "opt_cost": op.opt_cost,
        "est_card_in": op.est_card_in,
        "est_card_out": op.est_card_out,
    }
    for name in _OPTIONAL:
        value = getattr(op, name)
        if value is not None:
            doc[name] = value
    doc["children"] = list(op.children)
    return doc


def plan_to_dict(plan: QueryPlan) -> dict:
    return {
        "query_id": plan.query_id,
        "weight": plan.weight,
        "root": plan.root,
        "operators": [operator_to_dict(op) for op in plan],
    }


def dump_plan(plan: QueryPlan) -> str:
    return json.dumps(plan_to_dict(plan), sort_keys=False)


def _number(doc, key, op_id, required=True):
    if key not in doc or doc[key] is None:
        if required:
            raise PlanError(f"missing field {key!r}", op_id)
        return None
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise PlanError(f"field {key!r} must be a number, got {value!r}", op_id)
    return float(value)


def plan_from_dict(doc: dict) -> QueryPlan:
    if not isinstance(doc, dict):
        raise PlanError("plan document must be a JSON object")
    for key in ("query_id", "root", "operators"):
        if key not in doc:
            raise PlanError(f"plan document missing {key!r}")
    if not isinstance(doc["operators"], list):
        raise PlanError("'operators' must be a list")
    operators = {}
    for raw in doc["operators"]:
        if not isinstance(raw, dict) or "id" not in raw:
            raise PlanError(f"operator entry without id: {raw!r}")
        op_id = raw["id"]
        if isinstance(op_id, bool) or not isinstance(op_id, int):
            raise PlanError(f"operator id must be an integer, got {op_id!r}")
        if op_id in operators:
            raise PlanError("duplicate operator id", op_id)
        if "kind" not in raw:
            raise PlanError("missing field 'kind'", op_id)
        children = raw.get("children", [])
        if not isinstance(children, list) or not all(
            isinstance(c, int) and not isinstance(c, bool) for c in children
        ):
            raise PlanError(f"children must be a list of integer ids, got {children!r}", op_id)
        operators[op_id] = PlanOperator(
            id=op_id,
            kind=kind_from_name(raw["kind"]),
            opt_cost=_number(raw, "opt_cost", op_id),
            est_card_in=_number(raw, "est_card_in", op_id),
            est_card_out=_number(raw, "est_card_out", op_id),
            act_cost=_number(raw, "act_cost", op_id, required=False),
            act_card_in=_number(raw, "act_card_in", op_id, required=False),
            act_card_out=_number(raw, "act_card_out", op_id, required=False),
            children=tuple(children),
        )
    weight = doc.get("weight", 1.0)
    if isinstance(weight, bool) or not isinstance(weight, (int, float)):
        raise PlanError(f"weight must be a number, got {weight!r}")
    return QueryPlan(
        query_id=str(doc["query_id"]),
        root=doc["root"],
        operators=operators,
        weight=float(weight),
    )


def parse_plan(text: str) -> QueryPlan:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PlanError(f"malformed plan document: {exc}") from exc
    return plan_from_dict(doc)


def load_plans(path) -> list:
    """Read plans from a JSON-lines file (one plan document per line) or a JSON array."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        return [parse_plan(line) for line in text.splitlines() if line.strip()]
    if isinstance(doc, list):
        return [plan_from_dict(d) for d in doc]
    return [plan_from_dict(doc)]


def dumps_plans(plans: Iterable[QueryPlan]) -> str:
    return "".join(dump_plan(p) + "\n" for p in plans)
