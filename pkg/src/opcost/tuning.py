"""Simulated index tuning with a what-if oracle.

The oracle stands in for an optimizer's hypothetical-index facility: for each
(query, configuration) pair it holds the plan the optimizer would pick, with
optimizer costs visible to the tuner and actual costs visible only to
evaluation.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, replace
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .combiner import MixedCostEstimator
from .exceptions import OracleMissError
from .feedback import FeedbackStore
from .plan import OperatorKind, PlanOperator, QueryPlan
from .synth import DEFAULT_OPT_COSTS, GroundTruth, optimizer_cost

OPTIMIZER_MODE = "optimizer"
COMBINED_MODE = "combined"
MODES = (OPTIMIZER_MODE, COMBINED_MODE)
DEFAULT_REGRESSION_CUT = -0.2
BIN_EDGES = tuple(round(-1.0 + 0.2 * i, 1) for i in range(11))


@dataclass(frozen=True)
class IndexConfiguration:
    id: str
    indexes: frozenset = frozenset()

    def __post_init__(self):
        if not self.id:
            raise ValueError("configuration id must be nonempty")
        object.__setattr__(self, "indexes", frozenset(self.indexes))


def nested_configurations(ranked_indexes: Sequence[str], prefix: str = "I") -> list:
    """Prefix chain ``{i1} ⊂ {i1, i2} ⊂ ...`` of a ranked index list."""
    if len(set(ranked_indexes)) != len(ranked_indexes):
        raise ValueError("ranked index list has duplicates")
    return [
        IndexConfiguration(f"{prefix}{k}", frozenset(ranked_indexes[:k]))
        for k in range(1, len(ranked_indexes) + 1)
    ]


def _strip_actuals(plan: QueryPlan) -> QueryPlan:
    return plan.with_operators(
        replace(op, act_cost=None, act_card_in=None, act_card_out=None) for op in plan
    )


class WhatIfOracle:
    """Read-only map ``(query_id, config_id) -> plan``."""

    def __init__(self, plans: Mapping):
        self._plans = dict(plans)
        self._visible = {key: _strip_actuals(p) for key, p in self._plans.items()}

    def __contains__(self, key):
        return key in self._plans

    def keys(self):
        return self._plans.keys()

    def _get(self, table, query_id, config_id):
        try:
            return table[(query_id, config_id)]
        except KeyError:
            raise OracleMissError(f"no what-if plan for query {query_id!r} under {config_id!r}") from None

    def plan(self, query_id: str, config_id: str) -> QueryPlan:
        """The plan as the tuner sees it: optimizer costs only."""
        return self._get(self._visible, query_id, config_id)

    def executed_plan(self, query_id: str, config_id: str) -> QueryPlan:
        return self._get(self._plans, query_id, config_id)

    def actual_cost(self, query_id: str, config_id: str) -> float:
        return self.executed_plan(query_id, config_id).total_act_cost()

    def map_plans(self, fn: Callable[[QueryPlan], QueryPlan]) -> "WhatIfOracle":
        return WhatIfOracle({key: fn(p) for key, p in self._plans.items()})

    def scaled(self, k: float) -> "WhatIfOracle":
        """Copy with every optimizer cost multiplied by ``k``."""
        return self.map_plans(lambda p: p.with_operators(replace(op, opt_cost=op.opt_cost * k) for op in p))


@dataclass(frozen=True)
class TuningOutcome:
    query_id: str
    mode: str
    old_config: str
    new_config: str
    est_improvement: float
    act_improvement: float
    recommended: bool


def estimated_improvement(c_old: float, c_new: float) -> float:
    if not c_old > 0:
        raise ValueError(f"old cost must be positive, got {c_old}")
    return 1.0 - c_new / c_old


def actual_improvement(a_old: float, a_new: float) -> float:
    if not a_old > 0:
        raise ValueError(f"old actual cost must be positive, got {a_old}")
    return 1.0 - a_new / a_old


def _estimated_cost(plan: QueryPlan, mode: str, estimator: Optional[MixedCostEstimator]) -> float:
    if mode == OPTIMIZER_MODE:
        return plan.total_opt_cost()
    if mode == COMBINED_MODE:
        if estimator is None:
            raise ValueError("combined mode needs a fitted MixedCostEstimator")
        return estimator.estimate(plan).total
    raise ValueError(f"unknown estimator mode {mode!r}")


def tune(
    query_id: str,
    oracle: WhatIfOracle,
    candidates: Sequence[IndexConfiguration],
    old_config: IndexConfiguration,
    mode: str = OPTIMIZER_MODE,
    tau: float = 0.0,
    estimator: Optional[MixedCostEstimator] = None,
) -> TuningOutcome:
    """Pick the cheapest candidate by estimated cost and gate it on ``tau``."""
    if not 0 <= tau < 1:
        raise ValueError(f"tau must lie in [0, 1), got {tau}")
    if not candidates:
        raise ValueError("no candidate configurations")
    costs = {c.id: _estimated_cost(oracle.plan(query_id, c.id), mode, estimator) for c in candidates}
    if old_config.id not in costs:
        costs[old_config.id] = _estimated_cost(oracle.plan(query_id, old_config.id), mode, estimator)
    best = min(candidates, key=lambda c: (costs[c.id], len(c.indexes), c.id))
    if best.id == old_config.id:
        est = act = 0.0
    else:
        est = estimated_improvement(costs[old_config.id], costs[best.id])
        act = actual_improvement(
            oracle.actual_cost(query_id, old_config.id), oracle.actual_cost(query_id, best.id)
        )
    return TuningOutcome(
        query_id=query_id,
        mode=mode,
        old_config=old_config.id,
        new_config=best.id,
        est_improvement=est,
        act_improvement=act,
        recommended=best.id != old_config.id and est > tau,
    )


# -- reporting --------------------------------------------------------------


def bin_labels() -> list:
    labels = [f"<{BIN_EDGES[0]:.1f}"]
    for lo, hi in zip(BIN_EDGES[:-2], BIN_EDGES[1:-1]):
        labels.append(f"[{lo:.1f},{hi:.1f})")
    labels.append(f"[{BIN_EDGES[-2]:.1f},{BIN_EDGES[-1]:.1f}]")
    return labels


def improvement_bin(x: float) -> str:
    labels = bin_labels()
    if x < BIN_EDGES[0]:
        return labels[0]
    # index of the 0.2-wide bin; the top bin is closed and absorbs anything above
    k = min(int(math.floor((x - BIN_EDGES[0]) / 0.2 + 1e-9)), len(BIN_EDGES) - 2)
    return labels[k + 1]


def effective_improvement(outcome: TuningOutcome) -> float:
    """Actual improvement the query sees: zero when the tuner keeps the old configuration."""
    return outcome.act_improvement if outcome.recommended else 0.0


@dataclass(frozen=True)
class ModeReport:
    histogram: dict
    regressions: int
    n_outcomes: int
    n_recommended: int

    def to_dict(self) -> dict:
        return asdict(self)


def regression_report(outcomes: Iterable[TuningOutcome], regression_cut: float = DEFAULT_REGRESSION_CUT) -> dict:
    """Per-mode histogram of effective actual improvement and regression count."""
    outcomes = list(outcomes)
    if not outcomes:
        raise ValueError("no outcomes")
    report = {}
    for mode in sorted({o.mode for o in outcomes}, key=lambda m: (m not in MODES, m)):
        sub = [o for o in outcomes if o.mode == mode]
        hist = {label: 0 for label in bin_labels()}
        for o in sub:
            hist[improvement_bin(effective_improvement(o))] += 1
        report[mode] = ModeReport(
            histogram=hist,
            regressions=sum(1 for o in sub if o.recommended and o.act_improvement < regression_cut),
            n_outcomes=len(sub),
            n_recommended=sum(1 for o in sub if o.recommended),
        )
    return report


CSV_COLUMNS = ("query_id", "mode", "old", "new", "est_improvement", "act_improvement", "recommended")


def outcomes_to_csv(outcomes: Iterable[TuningOutcome], tau: Optional[float] = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = list(CSV_COLUMNS) + (["tau"] if tau is not None else [])
    writer.writerow(cols)
    for o in outcomes:
        row = [o.query_id, o.mode, o.old_config, o.new_config,
               repr(o.est_improvement), repr(o.act_improvement), str(o.recommended).lower()]
        if tau is not None:
            row.append(repr(tau))
        writer.writerow(row)
    return buf.getvalue()


# -- workload-level lemmas --------------------------------------------------


def workload_cost(workload, config, cost_fn) -> float:
    """Weighted sum of per-query costs.

    ``workload`` holds :class:`QueryPlan` values or ``(query_id, weight)`` pairs.
    """
    total = 0.0
    for item in workload:
        if isinstance(item, QueryPlan):
            qid, w = item.query_id, item.weight
        else:
            qid, w = item
        if not w > 0:
            raise ValueError(f"weight for {qid!r} must be positive, got {w}")
        total += cost_fn(qid, config) * w
    return total


@dataclass(frozen=True)
class CarryoverReport:
    eps: float
    deterministic: bool
    workload_error: float
    standard_error: float
    est_improvement: float
    act_improvement: float
    holds: bool

    def to_dict(self) -> dict:
        return asdict(self)


def check_error_carryover(weights, act_old, act_new, eps, errors_old=None, errors_new=None,
                          tol=1e-12) -> CarryoverReport:
    """Relative-error carry-over from queries to a workload.

    With no ``errors_*`` every query's estimate is ``(1 + eps)`` times its
    actual cost, and the workload-level relative error must equal ``eps`` and
    estimated improvement must equal actual improvement (to ``tol``). With
    sampled per-query errors of mean ``eps``, the workload-level relative error
    must fall within three standard errors of ``eps``.
    """
    w = np.asarray(weights, dtype=np.float64)
    a_old = np.asarray(act_old, dtype=np.float64)
    a_new = np.asarray(act_new, dtype=np.float64)
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    deterministic = errors_old is None
    x_old = np.full_like(a_old, eps) if deterministic else np.asarray(errors_old, dtype=np.float64)
    x_new = x_old if errors_new is None else np.asarray(errors_new, dtype=np.float64)
    if deterministic:
        x_new = np.full_like(a_new, eps)

    def cost(x, a):
        return workload_cost(
            [(k, wk) for k, wk in enumerate(w)], None, lambda k, _cfg: (1.0 + x[k]) * a[k]
        )

    def actual(a):
        return workload_cost([(k, wk) for k, wk in enumerate(w)], None, lambda k, _cfg: a[k])

    c_old, c_new = cost(x_old, a_old), cost(x_new, a_new)
    A_old, A_new = actual(a_old), actual(a_new)
    werr = c_old / A_old - 1.0
    est = estimated_improvement(c_old, c_new)
    act = actual_improvement(A_old, A_new)
    if deterministic:
        se = 0.0
        holds = abs(werr - eps) <= tol and abs(est - act) <= tol
    else:
        aw = a_old * w
        se = float(np.std(x_old, ddof=1) * math.sqrt(float(aw @ aw)) / aw.sum())
        holds = abs(werr - eps) <= 3 * se
    return CarryoverReport(float(eps), deterministic, float(werr), se, float(est), float(act), bool(holds))


# -- synthetic tuning suite -------------------------------------------------


@dataclass(frozen=True)
class TuningSuite:
    oracle: WhatIfOracle
    configs: dict  # query_id -> list of IndexConfiguration (nested chain)

    @property
    def query_ids(self) -> list:
        return list(self.configs)

    def executed_plans(self) -> list:
        return [self.oracle.executed_plan(q, c.id) for q, cs in self.configs.items() for c in cs]

    def feedback(self, backbone=None) -> FeedbackStore:
        store = FeedbackStore(backbone)
        for plan in self.executed_plans():
            store.ingest(plan)
        return store

    def scaled(self, k: float) -> "TuningSuite":
        return TuningSuite(self.oracle.scaled(k), self.configs)


def build_tuning_suite(
    n_queries: int = 100,
    n_indexes: int = 5,
    seed: int = 0,
    gt: Optional[GroundTruth] = None,
    opt_costs: Optional[Mapping] = None,
    table_rows: tuple = (2e3, 2e5),
    fetch_fraction: tuple = (0.02, 1.0),
) -> TuningSuite:
    """Random single-query workloads, each with a nested chain of index configurations.

    Every query scans ``n_indexes`` or ``n_indexes + 1`` tables and joins them
    left-deep under an aggregate. Index ``j`` targets scan ``j``: with the
    index present the table scan becomes an index seek that touches a
    fraction of the table's rows. The output cardinality of each scan does not
    depend on the configuration, so internal operators are identical across a
    query's configurations.
    """
    gt = gt or GroundTruth()
    opt_costs = opt_costs or DEFAULT_OPT_COSTS
    rng = np.random.default_rng(seed)
    plans = {}
    configs = {}
    width = len(str(n_queries - 1))

    for q in range(n_queries):
        qid = f"q{q:0{width}d}"
        n_scans = n_indexes + int(rng.integers(0, 2))
        rows = np.exp(rng.uniform(np.log(table_rows[0]), np.log(table_rows[1]), n_scans))
        fetch = np.exp(rng.uniform(np.log(fetch_fraction[0]), np.log(fetch_fraction[1]), n_scans))
        sel = fetch * rng.uniform(0.3, 1.0, n_scans)
        join_keep = rng.uniform(0.2, 1.0, n_scans)
        agg_keep = rng.uniform(0.001, 0.1)
        index_ids = [f"{qid}.ix{j}" for j in range(n_indexes)]

        def scan(j, indexed):
            n_rows = float(round(rows[j]))
            c_out = float(round(sel[j] * n_rows))
            if indexed:
                return OperatorKind.INDEX_SEEK, float(round(fetch[j] * n_rows)), c_out
            return OperatorKind.TABLE_SCAN, n_rows, c_out

        # rank indexes by the optimizer's estimated benefit, as a tuner would
        benefit = []
        for j in range(n_indexes):
            k0, _, out0 = scan(j, False)
            k1, _, out1 = scan(j, True)
            benefit.append(optimizer_cost(k0, out0, opt_costs) - optimizer_cost(k1, out1, opt_costs))
        ranked = [index_ids[j] for j in sorted(range(n_indexes), key=lambda j: (-benefit[j], j))]
        chain = nested_configurations(ranked)
        configs[qid] = chain

        for cfg in chain:
            ops = []

            def add(kind, c_in, c_out, children):
                op_id = len(ops) + 1
                ops.append(
                    PlanOperator(
                        id=op_id,
                        kind=kind,
                        opt_cost=optimizer_cost(kind, c_out, opt_costs),
                        est_card_in=c_in,
                        est_card_out=c_out,
                        act_cost=gt.expected_cost(kind, c_in, c_out),
                        act_card_in=c_in,
                        act_card_out=c_out,
                        children=tuple(children),
                    )
                )
                return op_id, c_out

            leaves = [add(*scan(j, j < n_indexes and index_ids[j] in cfg.indexes), ()) for j in range(n_scans)]
            left = leaves[0]
            for j, right in enumerate(leaves[1:], start=1):
                c_in = left[1] + right[1]
                c_out = float(round(max(left[1], right[1]) * join_keep[j]))
                left = add(OperatorKind.HASH_JOIN, c_in, c_out, (left[0], right[0]))
            root = add(OperatorKind.AGGREGATE, left[1], float(max(1, round(left[1] * agg_keep))), (left[0],))
            plans[(qid, cfg.id)] = QueryPlan(qid, root[0], {op.id: op for op in ops})

    return TuningSuite(WhatIfOracle(plans), configs)


def run_tuning(suite: TuningSuite, mode: str, tau: float, estimator: Optional[MixedCostEstimator] = None) -> list:
    """Tune every query from every configuration of its chain."""
    outcomes = []
    for qid, chain in suite.configs.items():
        for old in chain:
            outcomes.append(tune(qid, suite.oracle, chain, old, mode, tau, estimator))
    return outcomes


def report_to_json(report: Mapping, regression_cut: float = DEFAULT_REGRESSION_CUT, **extra) -> str:
    doc = {"regression_cut": regression_cut, **extra,
           "modes": {mode: r.to_dict() for mode, r in report.items()}}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
