"""Operator-level query cost modeling with pivot scaling."""

from .combiner import CombinedEstimate, MixedCostEstimator, PivotChoice, combine, pick_pivot, relative_cost
from .feedback import FeatureVector, FeedbackRecord, FeedbackStore
from .models import OperatorModel, feature_map, predict, train
from .plan import OperatorKind, PlanOperator, QueryPlan, leaf_operators, parse_plan

__all__ = [
    "CombinedEstimate",
    "FeatureVector",
    "FeedbackRecord",
    "FeedbackStore",
    "MixedCostEstimator",
    "OperatorKind",
    "OperatorModel",
    "PivotChoice",
    "PlanOperator",
    "QueryPlan",
    "combine",
    "feature_map",
    "leaf_operators",
    "parse_plan",
    "pick_pivot",
    "predict",
    "relative_cost",
    "train",
]
