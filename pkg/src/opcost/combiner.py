"""Combine external model estimates with optimizer estimates through a pivot.

Model-sourced operator costs (milliseconds) are turned into optimizer units by
the pivot operator's ratio ``opt_cost / act_cost``; operators without a model
keep the optimizer's own estimate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import InsufficientFeedbackError, PivotError
from .feedback import DEFAULT_THRESHOLD, FeatureVector, FeedbackStore
from .models import OperatorModel, train
from .plan import QueryPlan, check_backbone, kind_name

MODEL = "model"
OPTIMIZER = "optimizer"
DEFAULT_MIN_ACT_COST_MS = 1.0


@dataclass(frozen=True)
class PivotChoice:
    record_id: int
    opt_cost: float
    act_cost: float

    def __post_init__(self):
        if not self.act_cost > 0:
            raise PivotError(f"pivot record {self.record_id} has act_cost {self.act_cost}; must be > 0")
        if not self.opt_cost > 0:
            raise PivotError(f"pivot record {self.record_id} has opt_cost {self.opt_cost}; must be > 0")

    @property
    def lam(self) -> float:
        return self.opt_cost / self.act_cost

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "opt_cost": self.opt_cost,
            "act_cost": self.act_cost,
            "lambda": self.lam,
        }

    @classmethod
    def from_record(cls, record) -> "PivotChoice":
        return cls(record.record_id, record.opt_cost, record.act_cost)


@dataclass(frozen=True)
class Contribution:
    source: str
    raw: float
    contribution: float


@dataclass(frozen=True)
class CombinedEstimate:
    query_id: str
    total: float
    per_operator: dict = field(default_factory=dict)
    pivot: Optional[PivotChoice] = None

    def model_part(self) -> float:
        return sum(c.contribution for c in self.per_operator.values() if c.source == MODEL)

    def optimizer_part(self) -> float:
        return sum(c.contribution for c in self.per_operator.values() if c.source == OPTIMIZER)

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "total": self.total,
            "pivot": None if self.pivot is None else self.pivot.to_dict(),
            "operators": [
                {"id": op_id, "source": c.source, "raw": c.raw, "contribution": c.contribution}
                for op_id, c in self.per_operator.items()
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict())


def pick_pivot(records: Iterable, min_act_cost_ms: float = DEFAULT_MIN_ACT_COST_MS, kinds=None) -> PivotChoice:
    """Pick the feedback record with the largest ``opt_cost / act_cost``.

    Records with ``act_cost`` below ``min_act_cost_ms`` (or zero) are not
    eligible. When ``kinds`` is given, only records of those kinds compete.
    Ties go to the lowest ``record_id``.
    """
    if isinstance(records, FeedbackStore):
        records = records.snapshot()
    eligible = sorted(
        (
            r
            for r in records
            if r.act_cost > 0 and r.act_cost >= min_act_cost_ms and (kinds is None or r.kind in kinds)
        ),
        key=lambda r: r.record_id,
    )
    if not eligible:
        raise PivotError(f"no feedback record with act_cost >= {min_act_cost_ms} ms")
    best, best_lam = None, 0.0
    for r in eligible:
        lam = r.opt_cost / r.act_cost
        if lam > best_lam:
            best, best_lam = r, lam
    if best is None:
        raise PivotError("every eligible record has opt_cost 0; lambda undefined")
    return PivotChoice.from_record(best)


def relative_cost(extcost: float, pivot: PivotChoice) -> float:
    return extcost / pivot.act_cost


def _as_model_map(models) -> dict:
    if models is None:
        return {}
    if isinstance(models, Mapping):
        return dict(models)
    return {m.kind: m for m in models}


def combine(plan: QueryPlan, models, pivot: Optional[PivotChoice] = None) -> CombinedEstimate:
    models = _as_model_map(models)
    per_operator = {}
    total = 0.0
    for op in plan:
        model = models.get(op.kind)
        if model is not None:
            if pivot is None:
                raise PivotError(f"operator {op.id} ({kind_name(op.kind)}) has a model but no pivot was given")
            raw = model.predict_one(FeatureVector.from_operator(op))
            value = relative_cost(raw, pivot) * pivot.opt_cost
            per_operator[op.id] = Contribution(MODEL, raw, value)
        else:
            value = op.opt_cost
            per_operator[op.id] = Contribution(OPTIMIZER, op.opt_cost, value)
        total += value
    return CombinedEstimate(plan.query_id, total, per_operator, pivot)


class MixedCostEstimator(BaseEstimator):
    """Plan cost estimator that mixes trained operator models with optimizer costs.

    ``fit`` trains one :class:`OperatorModel` per backbone kind that has at
    least ``threshold`` feedback records and picks one pivot from those
    records. ``predict`` returns combined plan costs in optimizer units.
    """

    def __init__(self, backbone=None, threshold=DEFAULT_THRESHOLD, min_act_cost_ms=DEFAULT_MIN_ACT_COST_MS):
        self.backbone = backbone
        self.threshold = threshold
        self.min_act_cost_ms = min_act_cost_ms

    def fit(self, X, y=None):
        if isinstance(X, FeedbackStore):
            records = X.snapshot()
        else:
            records = tuple(X)
        kinds = check_backbone(self.backbone)
        by_kind = {}
        for r in records:
            if r.kind in kinds:
                by_kind.setdefault(r.kind, []).append(r)
        self.models_ = {}
        self.sufficiency_ = {}
        for kind, recs in by_kind.items():
            self.sufficiency_[kind] = len(recs)
            if len(recs) >= self.threshold:
                self.models_[kind] = train(recs, self.threshold)
        if self.models_:
            self.pivot_ = pick_pivot(records, self.min_act_cost_ms, kinds=set(self.models_))
        else:
            self.pivot_ = None
        return self

    @classmethod
    def from_parts(cls, models, pivot: Optional[PivotChoice], **params) -> "MixedCostEstimator":
        est = cls(**params)
        est.models_ = _as_model_map(models)
        est.sufficiency_ = {}
        est.pivot_ = pivot
        if est.models_ and pivot is None:
            raise PivotError("models given without a pivot")
        return est

    def estimate(self, plan: QueryPlan) -> CombinedEstimate:
        check_is_fitted(self, "models_")
        return combine(plan, self.models_, self.pivot_)

    def predict(self, X) -> np.ndarray:
        if isinstance(X, QueryPlan):
            X = [X]
        return np.array([self.estimate(p).total for p in X], dtype=np.float64)

    def require_models(self):
        check_is_fitted(self, "models_")
        if not self.models_:
            raise InsufficientFeedbackError(
                f"no backbone kind reached {self.threshold} feedback records"
            )


def optimizer_cost(plan: QueryPlan) -> float:
    return plan.total_opt_cost()
