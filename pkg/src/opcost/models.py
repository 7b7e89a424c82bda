"""Per-operator-kind external cost models.

Each model is a linear regression of actual CPU time on four terms of the
estimated cardinalities::

    [1, C_out, C_in, C_in * log2(1 + C_in)]

Estimated cardinalities are used for both training and prediction.
"""

from __future__ import annotations

import json
import logging
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import InsufficientFeedbackError
from .feedback import DEFAULT_THRESHOLD, FeatureVector
from .plan import kind_from_name, kind_name

logger = logging.getLogger(__name__)

N_TERMS = 4
RIDGE_DAMPING = 1e-6


def feature_map(fv: FeatureVector) -> np.ndarray:
    return design_matrix([[fv.est_card_in, fv.est_card_out]])[0]


def design_matrix(X) -> np.ndarray:
    """Expand an ``(n, 2)`` array of ``[est_card_in, est_card_out]`` to the 4-term basis."""
    X = np.asarray(X, dtype=np.float64)
    c_in, c_out = X[:, 0], X[:, 1]
    return np.column_stack([np.ones(len(X)), c_out, c_in, c_in * np.log2(1.0 + c_in)])


def features_to_array(features: Sequence[FeatureVector]) -> np.ndarray:
    return np.array([[f.est_card_in, f.est_card_out] for f in features], dtype=np.float64).reshape(-1, 2)


class OperatorModel(RegressorMixin, BaseEstimator):
    """Cost regressor for one operator kind.

    Parameters
    ----------
    kind : OperatorKind or str, optional
        Operator kind the model is trained for. Informational.
    threshold : int
        Minimum number of training rows; fewer raises
        :class:`InsufficientFeedbackError`.

    Attributes
    ----------
    coef_ : ndarray of shape (4,)
    trained_on_ : int
    residual_rms_ : float
        Root-mean-square training residual, in milliseconds.
    ridge_ : bool
        True when the design was rank deficient and a small ridge penalty was
        applied.
    """

    def __init__(self, kind=None, threshold=DEFAULT_THRESHOLD):
        self.kind = kind
        self.threshold = threshold

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if X.shape[1] != 2:
            raise ValueError(f"expected 2 feature columns (est_card_in, est_card_out), got {X.shape[1]}")
        if np.any(X < 0):
            raise ValueError("cardinalities must be nonnegative")
        n = len(y)
        if n < self.threshold:
            raise InsufficientFeedbackError(
                f"{n} records for {kind_name(self.kind) if self.kind is not None else 'model'}, "
                f"need at least {self.threshold}"
            )
        # canonical row order makes the fit independent of record order
        order = np.lexsort((y, X[:, 1], X[:, 0]))
        X, y = X[order], y[order]

        D = design_matrix(X)
        scale = np.abs(D).max(axis=0)
        scale[scale == 0] = 1.0
        Ds = D / scale

        self.ridge_ = bool(np.linalg.matrix_rank(Ds) < N_TERMS)
        if self.ridge_:
            logger.warning(
                "rank-deficient design for %s (%d rows); using ridge damping %g",
                self.kind, n, RIDGE_DAMPING,
            )
            Ds_aug = np.vstack([Ds, np.sqrt(RIDGE_DAMPING) * np.eye(N_TERMS)])
            y_aug = np.concatenate([y, np.zeros(N_TERMS)])
            beta, *_ = np.linalg.lstsq(Ds_aug, y_aug, rcond=None)
        else:
            beta, *_ = np.linalg.lstsq(Ds, y, rcond=None)

        self.coef_ = beta / scale
        resid = y - D @ self.coef_
        self.residual_rms_ = float(np.sqrt(np.mean(resid**2)))
        self.trained_on_ = int(n)
        self.n_features_in_ = 2
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        return np.maximum(design_matrix(X) @ self.coef_, 0.0)

    # plain-name accessors
    @property
    def coefficients(self) -> np.ndarray:
        check_is_fitted(self, "coef_")
        return self.coef_

    @property
    def trained_on(self) -> int:
        return self.trained_on_

    @property
    def residual_rms(self) -> float:
        return self.residual_rms_

    def predict_one(self, fv: FeatureVector) -> float:
        check_is_fitted(self, "coef_")
        return max(float(feature_map(fv) @ self.coef_), 0.0)

    def to_dict(self) -> dict:
        check_is_fitted(self, "coef_")
        return {
            "kind": kind_name(self.kind),
            "coefficients": [float(c) for c in self.coef_],
            "trained_on": self.trained_on_,
            "residual_rms": self.residual_rms_,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "OperatorModel":
        coef = np.asarray(doc["coefficients"], dtype=np.float64)
        if coef.shape != (N_TERMS,):
            raise ValueError(f"model needs {N_TERMS} coefficients, got {coef.shape}")
        model = cls(kind=kind_from_name(doc["kind"]))
        model.coef_ = coef
        model.trained_on_ = int(doc["trained_on"])
        model.residual_rms_ = float(doc["residual_rms"])
        model.ridge_ = False
        model.n_features_in_ = 2
        return model

    @classmethod
    def from_coefficients(cls, kind, coefficients) -> "OperatorModel":
        return cls.from_dict(
            {"kind": kind_name(kind), "coefficients": list(coefficients), "trained_on": 0, "residual_rms": 0.0}
        )


def train(records, threshold: int = DEFAULT_THRESHOLD) -> OperatorModel:
    """Fit an :class:`OperatorModel` on feedback records that share one kind."""
    records = list(records)
    if not records:
        raise InsufficientFeedbackError(f"0 records, need at least {threshold}")
    kinds = {r.kind for r in records}
    if len(kinds) != 1:
        raise ValueError(f"records mix operator kinds: {sorted(kind_name(k) for k in kinds)}")
    X = features_to_array([r.features for r in records])
    y = np.array([r.act_cost for r in records], dtype=np.float64)
    return OperatorModel(kind=records[0].kind, threshold=threshold).fit(X, y)


def predict(model: OperatorModel, fv: FeatureVector) -> float:
    return model.predict_one(fv)


def dumps_models(models) -> str:
    return json.dumps([m.to_dict() for m in models], indent=2) + "\n"


def load_models(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        docs = json.load(fh)
    if isinstance(docs, dict):
        docs = [docs]
    models = [OperatorModel.from_dict(d) for d in docs]
    return {m.kind: m for m in models}
