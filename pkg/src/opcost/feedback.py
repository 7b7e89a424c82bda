"""Operator-level execution feedback harvested from executed plans."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from typing import Iterable, Optional

from .plan import Kind, QueryPlan, check_backbone, kind_from_name, kind_name

DEFAULT_THRESHOLD = 10


@dataclass(frozen=True)
class FeatureVector:
    est_card_in: float
    est_card_out: float
    act_card_in: Optional[float] = None
    act_card_out: Optional[float] = None

    @classmethod
    def from_operator(cls, op) -> "FeatureVector":
        return cls(op.est_card_in, op.est_card_out, op.act_card_in, op.act_card_out)

    def to_dict(self) -> dict:
        doc = {"est_card_in": self.est_card_in, "est_card_out": self.est_card_out}
        if self.act_card_in is not None:
            doc["act_card_in"] = self.act_card_in
        if self.act_card_out is not None:
            doc["act_card_out"] = self.act_card_out
        return doc


@dataclass(frozen=True)
class FeedbackRecord:
    record_id: int
    kind: Kind
    features: FeatureVector
    opt_cost: float
    act_cost: float

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "kind": kind_name(self.kind),
            "features": self.features.to_dict(),
            "opt_cost": self.opt_cost,
            "act_cost": self.act_cost,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FeedbackRecord":
        feats = doc["features"]
        record = cls(
            record_id=int(doc["record_id"]),
            kind=kind_from_name(doc["kind"]),
            features=FeatureVector(
                float(feats["est_card_in"]),
                float(feats["est_card_out"]),
                _opt_float(feats.get("act_card_in")),
                _opt_float(feats.get("act_card_out")),
            ),
            opt_cost=float(doc["opt_cost"]),
            act_cost=float(doc["act_cost"]),
        )
        if record.opt_cost < 0 or record.act_cost < 0:
            raise ValueError(f"feedback record {record.record_id}: negative cost")
        return record


def _opt_float(x):
    return None if x is None else float(x)


class FeedbackStore:
    """Append-only store of feedback records.

    Records keep insertion order and receive increasing ``record_id`` values.
    Only operators whose kind belongs to the backbone set are kept.
    """

    def __init__(self, backbone=None, records: Iterable[FeedbackRecord] = ()):
        self.backbone = check_backbone(backbone)
        self._records = []
        self._lock = threading.Lock()
        for rec in records:
            self.add(rec)

    def __len__(self):
        return len(self._records)

    def __iter__(self):
        return iter(self.snapshot())

    @property
    def next_id(self) -> int:
        return self._records[-1].record_id + 1 if self._records else 0

    def add(self, record: FeedbackRecord):
        if record.kind not in self.backbone:
            raise ValueError(f"kind {kind_name(record.kind)} is not a backbone kind")
        with self._lock:
            if self._records and record.record_id <= self._records[-1].record_id:
                raise ValueError("record ids must increase monotonically")
            self._records.append(record)

    def ingest(self, plan: QueryPlan, backbone=None) -> int:
        """Add one record per measured backbone operator of ``plan``; return the count."""
        kinds = self.backbone if backbone is None else check_backbone(backbone) & self.backbone
        added = 0
        with self._lock:
            next_id = self._records[-1].record_id + 1 if self._records else 0
            for op in plan:
                if op.kind not in kinds or op.act_cost is None:
                    continue
                self._records.append(
                    FeedbackRecord(
                        record_id=next_id,
                        kind=op.kind,
                        features=FeatureVector.from_operator(op),
                        opt_cost=op.opt_cost,
                        act_cost=op.act_cost,
                    )
                )
                next_id += 1
                added += 1
        return added

    def snapshot(self) -> tuple:
        with self._lock:
            return tuple(self._records)

    def records_for(self, kind: Kind) -> list:
        return [r for r in self.snapshot() if r.kind == kind]

    def count(self, kind: Kind) -> int:
        return sum(1 for r in self.snapshot() if r.kind == kind)

    def has_sufficient_feedback(self, kind: Kind, threshold: int = DEFAULT_THRESHOLD) -> bool:
        if threshold < 1:
            raise ValueError("threshold must be >= 1")
        return self.count(kind) >= threshold

    def kinds(self) -> list:
        """Kinds present in the store, in order of first appearance."""
        seen = {}
        for r in self.snapshot():
            seen.setdefault(r.kind, None)
        return list(seen)

    def scaled(self, k: float) -> "FeedbackStore":
        """Copy with every optimizer cost multiplied by ``k``."""
        return FeedbackStore(
            self.backbone,
            [
                FeedbackRecord(r.record_id, r.kind, r.features, r.opt_cost * k, r.act_cost)
                for r in self.snapshot()
            ],
        )

    def dumps(self) -> str:
        return "".join(json.dumps(r.to_dict()) + "\n" for r in self.snapshot())

    @classmethod
    def loads(cls, text: str, backbone=None) -> "FeedbackStore":
        records = [FeedbackRecord.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]
        if backbone is None:
            backbone = check_backbone(None) | {r.kind for r in records}
        return cls(backbone, records)

    @classmethod
    def load(cls, path, backbone=None) -> "FeedbackStore":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read(), backbone)
