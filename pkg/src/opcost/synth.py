"""Synthetic workloads with known ground truth.

Two generators:

* :func:`synth_triples` draws correlated per-query ``(L, I, I')`` costs
  directly, for exercising the correlation analysis.
* :func:`synth_plans` builds full annotated plans whose actual operator costs
  come from a :class:`GroundTruth` cost function, for the end-to-end pipeline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .correlation import WorkloadDecomposition
from .exceptions import SynthError
from .models import design_matrix
from .plan import OperatorKind, PlanOperator, QueryPlan, kind_from_name, kind_name

K = OperatorKind

MAX_REJECTION_RATE = 0.5


@dataclass(frozen=True)
class SynthSpec:
    n_queries: int
    target_corr: np.ndarray
    scale: tuple  # (mean_L, mean_I, mean_Ip, sd_L, sd_I, sd_Ip)
    seed: int = 0

    def __post_init__(self):
        corr = np.asarray(self.target_corr, dtype=np.float64)
        object.__setattr__(self, "target_corr", corr)
        if self.n_queries < 2:
            raise SynthError("n_queries must be >= 2")
        if corr.shape != (3, 3):
            raise SynthError(f"target_corr must be 3x3, got {corr.shape}")
        if not np.allclose(corr, corr.T, atol=0, rtol=0):
            raise SynthError("target_corr must be symmetric")
        if not np.all(np.diag(corr) == 1.0):
            raise SynthError("target_corr must have a unit diagonal")
        if len(self.scale) != 6:
            raise SynthError("scale needs (mean_L, mean_I, mean_Ip, sd_L, sd_I, sd_Ip)")
        means, sds = self.scale[:3], self.scale[3:]
        if any(m <= 0 for m in means) or any(s < 0 for s in sds):
            raise SynthError("means must be positive and sds nonnegative")

    @classmethod
    def from_correlations(cls, n_queries, alpha, beta, gamma, scale, seed=0) -> "SynthSpec":
        corr = np.array([[1.0, alpha, beta], [alpha, 1.0, gamma], [beta, gamma, 1.0]])
        return cls(n_queries, corr, tuple(scale), seed)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "SynthSpec":
        return cls(
            int(doc["n_queries"]),
            np.asarray(doc["target_corr"], dtype=np.float64),
            tuple(float(v) for v in doc["scale"]),
            int(doc.get("seed", 0)),
        )


def correlation_factor(corr) -> np.ndarray:
    """Lower-triangular-ish factor ``F`` with ``F @ F.T == corr``.

    Cholesky first; positive semidefinite (singular) matrices fall back to an
    eigendecomposition. Indefinite matrices raise :class:`SynthError`.
    """
    corr = np.asarray(corr, dtype=np.float64)
    try:
        return np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(corr)
    if w.min() < -1e-10:
        raise SynthError(f"target_corr is not positive semidefinite (min eigenvalue {w.min():.3g})")
    return V * np.sqrt(np.clip(w, 0, None))


def synth_triples(spec: SynthSpec, lam: float = 1.0) -> WorkloadDecomposition:
    """Draw ``spec.n_queries`` nonnegative (L, I, I') triples; ``L' = lam * L``.

    Rows with a negative component are rejected and redrawn from the same
    generator, so the output is a pure function of ``spec``.
    """
    if not lam > 0:
        raise SynthError("lam must be positive")
    F = correlation_factor(spec.target_corr)
    means = np.asarray(spec.scale[:3], dtype=np.float64)
    sds = np.asarray(spec.scale[3:], dtype=np.float64)
    rng = np.random.default_rng(spec.seed)
    n = spec.n_queries
    accepted = []
    have = drawn = n_ok = 0
    while have < n:
        batch = max(n - have, 16)
        z = rng.standard_normal((batch, 3))
        rows = means + (z @ F.T) * sds
        ok = rows[np.all(rows >= 0, axis=1)]
        drawn += batch
        n_ok += len(ok)
        take = ok[: n - have]
        accepted.append(take)
        have += len(take)
        if drawn >= 4 * n and 1 - n_ok / drawn > MAX_REJECTION_RATE:
            break
    rate = 1 - n_ok / drawn
    if rate > MAX_REJECTION_RATE:
        raise SynthError(
            f"rejection rate {rate:.0%} exceeds {MAX_REJECTION_RATE:.0%}; "
            "means are too small relative to sds"
        )
    rows = np.vstack(accepted)[:n]
    L, I, Ip = rows[:, 0], rows[:, 1], rows[:, 2]
    return WorkloadDecomposition(L, I, lam * L, Ip, lam)


def random_correlation(rng) -> np.ndarray:
    """Random 3x3 correlation matrix from a Gaussian factor; always PSD."""
    F = rng.normal(size=(3, 3))
    C = F @ F.T
    d = np.sqrt(np.diag(C))
    C = C / np.outer(d, d)
    C = (C + C.T) / 2
    np.fill_diagonal(C, 1.0)
    return C


def random_workloads(count: int, n_queries: int = 100, seed: int = 0):
    """Yield ``count`` triples workloads with random correlations, scales and lambda.

    Standard deviations span several orders of magnitude so eta and eta'
    cover both small and large values; means sit four sds above zero to
    keep rejection rare.
    """
    rng = np.random.default_rng(seed)
    for _ in range(count):
        corr = random_correlation(rng)
        sds = rng.uniform(0.5, 20, 3) * np.exp(rng.uniform(-3, 3, 3))
        means = 4 * sds + rng.uniform(0, 10, 3)
        spec = SynthSpec(n_queries, corr, tuple(means) + tuple(sds), int(rng.integers(2**31)))
        yield synth_triples(spec, lam=float(np.exp(rng.uniform(-3, 5))))


# -- plans with ground truth ------------------------------------------------

# Coefficients on [1, C_out, C_in, C_in*log2(1 + C_in)], milliseconds.
DEFAULT_TRUE_COSTS = {
    K.TABLE_SCAN: (0.5, 0.002, 0.004, 0.0),
    K.INDEX_SCAN: (0.3, 0.003, 0.002, 0.0),
    K.INDEX_SEEK: (0.1, 0.002, 0.008, 0.0006),
    K.FILTER: (0.05, 0.0, 0.0002, 0.0),
    K.SORT: (0.1, 0.0, 0.0, 0.00002),
    K.HASH_JOIN: (0.4, 0.0001, 0.0003, 0.0),
    K.NESTED_LOOP_JOIN: (0.2, 0.0001, 0.0, 0.00003),
    K.MERGE_JOIN: (0.3, 0.0001, 0.0002, 0.0),
    K.AGGREGATE: (0.1, 0.0001, 0.0002, 0.0),
}

# Optimizer cost = OPT_UNIT * (c0 + c1 * C_out): unitless and deliberately
# mis-scaled against the true costs above.
OPT_UNIT = 100.0
DEFAULT_OPT_COSTS = {
    K.TABLE_SCAN: (1.0, 0.01),
    K.INDEX_SCAN: (0.8, 0.004),
    K.INDEX_SEEK: (0.3, 0.001),
    K.FILTER: (0.1, 0.0005),
    K.SORT: (0.5, 0.003),
    K.HASH_JOIN: (1.5, 0.004),
    K.NESTED_LOOP_JOIN: (0.5, 0.008),
    K.MERGE_JOIN: (1.0, 0.002),
    K.AGGREGATE: (0.6, 0.001),
}

JOIN_KINDS = (K.HASH_JOIN, K.NESTED_LOOP_JOIN, K.MERGE_JOIN)
UNARY_KINDS = (K.FILTER, K.SORT, K.AGGREGATE)


@dataclass(frozen=True)
class GroundTruth:
    """True per-kind cost functions plus Gaussian measurement noise."""

    coefficients: Mapping = field(default_factory=lambda: dict(DEFAULT_TRUE_COSTS))
    noise_sd: float = 0.0

    def __post_init__(self):
        if self.noise_sd < 0:
            raise SynthError("noise_sd must be >= 0")
        for kind, coef in self.coefficients.items():
            if len(coef) != 4:
                raise SynthError(f"{kind_name(kind)}: need 4 coefficients")
            if any(c < 0 for c in coef):
                # nonnegative coefficients keep costs nonnegative for any cardinality
                raise SynthError(f"{kind_name(kind)}: coefficients must be nonnegative")

    def expected_cost(self, kind, c_in, c_out) -> float:
        coef = np.asarray(self.coefficients[kind], dtype=np.float64)
        return float(design_matrix([[c_in, c_out]])[0] @ coef)

    def sample_cost(self, kind, c_in, c_out, rng) -> float:
        cost = self.expected_cost(kind, c_in, c_out)
        if self.noise_sd > 0:
            cost = max(cost + rng.normal(0.0, self.noise_sd), 0.0)
        return cost

    @classmethod
    def from_dict(cls, doc: Mapping) -> "GroundTruth":
        coefs = doc.get("coefficients")
        coefs = dict(DEFAULT_TRUE_COSTS) if coefs is None else {kind_from_name(k): tuple(v) for k, v in coefs.items()}
        return cls(coefs, float(doc.get("noise_sd", 0.0)))


def optimizer_cost(kind, c_out, opt_costs=None) -> float:
    c0, c1 = (opt_costs or DEFAULT_OPT_COSTS)[kind]
    return OPT_UNIT * (c0 + c1 * c_out)


def _log_uniform(rng, lo, hi):
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def synth_plans(
    n_queries: int,
    gt: Optional[GroundTruth] = None,
    leaves_per_plan: int = 3,
    internals_per_plan: int = 2,
    card_range: Sequence = (100.0, 1e5),
    opt_costs: Optional[Mapping] = None,
    seed: int = 0,
    leaf_kinds: Sequence = (K.TABLE_SCAN, K.INDEX_SCAN, K.INDEX_SEEK),
) -> list:
    """Random annotated plans with actual costs drawn from ``gt``.

    Leaves are created first, then internal operators join pairs of subtrees
    (or wrap one subtree when only one is left); the last operator is the root.
    Estimated and actual cardinalities are equal.
    """
    gt = gt or GroundTruth()
    lo, hi = card_range
    if n_queries < 1:
        raise SynthError("n_queries must be >= 1")
    if leaves_per_plan < 1 or internals_per_plan < 0:
        raise SynthError("need at least one leaf and a nonnegative number of internals")
    if internals_per_plan < leaves_per_plan - 1:
        raise SynthError(f"{leaves_per_plan} leaves need at least {leaves_per_plan - 1} internal operators")
    if not 0 < lo <= hi:
        raise SynthError("card_range must be positive and ordered")

    rng = np.random.default_rng(seed)
    plans = []
    width = len(str(n_queries - 1))
    for q in range(n_queries):
        ops = []
        frontier = []  # (op_id, output cardinality)

        def add(kind, c_in, c_out, children):
            op_id = len(ops) + 1
            ops.append(
                PlanOperator(
                    id=op_id,
                    kind=kind,
                    opt_cost=optimizer_cost(kind, c_out, opt_costs),
                    est_card_in=c_in,
                    est_card_out=c_out,
                    act_cost=gt.sample_cost(kind, c_in, c_out, rng),
                    act_card_in=c_in,
                    act_card_out=c_out,
                    children=tuple(children),
                )
            )
            frontier.append((op_id, c_out))

        for _ in range(leaves_per_plan):
            kind = leaf_kinds[int(rng.integers(len(leaf_kinds)))]
            c_in = round(_log_uniform(rng, lo, hi))
            c_out = round(c_in * rng.uniform(0.01, 1.0))
            add(kind, float(c_in), float(c_out), ())
        budget = internals_per_plan
        while budget > 0:
            if len(frontier) >= 2:
                (a, ca), (b, cb) = frontier.pop(0), frontier.pop(0)
                kind = JOIN_KINDS[int(rng.integers(len(JOIN_KINDS)))]
                c_in = ca + cb
                c_out = float(round(max(ca, cb) * rng.uniform(0.1, 1.0)))
                add(kind, c_in, c_out, (a, b))
            else:
                (a, ca) = frontier.pop(0)
                kind = UNARY_KINDS[int(rng.integers(len(UNARY_KINDS)))]
                c_out = float(round(ca * rng.uniform(0.1, 1.0)))
                add(kind, ca, c_out, (a,))
            budget -= 1
        plans.append(QueryPlan(f"q{q:0{width}d}", ops[-1].id, {op.id: op for op in ops}))
    return plans


def spec_from_json(path) -> SynthSpec:
    with open(path, encoding="utf-8") as fh:
        return SynthSpec.from_dict(json.load(fh))
