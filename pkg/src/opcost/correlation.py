"""Workload-level correlation statistics and the closed forms built on them.

Notation follows the usual decomposition of a plan's cost into a leaf part
and an internal part::

    P  = L  + I    actual CPU time
    P' = L' + I'   combined estimate (L' model-sourced, I' optimizer-sourced)

    eta  = sd(L)  / sd(I)      alpha = corr(L, I)
    eta' = sd(L') / sd(I')     beta  = corr(L, I')
                               gamma = corr(I, I')

All statistics are sample statistics (n - 1 normalization).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .combiner import MODEL
from .exceptions import DegenerateVarianceError, DomainError
from .plan import actual_internal_cost, actual_leaf_cost

ETA_PRIME_INF = 1e12


# -- generic correlation ----------------------------------------------------


def _pair(xs, ys):
    x = np.asarray(xs, dtype=np.float64).ravel()
    y = np.asarray(ys, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ValueError("need at least 2 observations")
    return x, y


def sample_sd(xs) -> float:
    x = np.asarray(xs, dtype=np.float64)
    return float(np.std(x, ddof=1))


def pearson(xs, ys) -> float:
    x, y = _pair(xs, ys)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0:
        raise DegenerateVarianceError("xs")
    if syy == 0:
        raise DegenerateVarianceError("ys")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def spearman(xs, ys) -> float:
    """Pearson correlation of average ranks."""
    x, y = _pair(xs, ys)
    return pearson(rankdata(x, method="average"), rankdata(y, method="average"))


# -- workload decomposition -------------------------------------------------


@dataclass(frozen=True)
class WorkloadDecomposition:
    L: np.ndarray
    I: np.ndarray
    Lp: np.ndarray
    Ip: np.ndarray
    lam: Optional[float] = None

    def __post_init__(self):
        arrays = [np.asarray(a, dtype=np.float64) for a in (self.L, self.I, self.Lp, self.Ip)]
        n = arrays[0].shape
        for name, a in zip(("L", "I", "L'", "I'"), arrays):
            if a.ndim != 1 or a.shape != n:
                raise ValueError(f"component {name} has shape {a.shape}, expected {n}")
            if np.any(a < 0):
                raise ValueError(f"component {name} has negative entries")
        for name, a in zip(("L", "I", "Lp", "Ip"), arrays):
            object.__setattr__(self, name, a)

    def __len__(self):
        return len(self.L)

    @property
    def P(self) -> np.ndarray:
        return self.L + self.I

    @property
    def Pp(self) -> np.ndarray:
        return self.Lp + self.Ip


def decompose(plans, estimates, backbone=None) -> WorkloadDecomposition:
    """Split actual and estimated plan costs into leaf and internal parts.

    ``estimates`` are :class:`CombinedEstimate` values in the same order as
    ``plans`` and must share one pivot.
    """
    plans = list(plans)
    estimates = list(estimates)
    if len(plans) != len(estimates):
        raise ValueError("plans and estimates differ in length")
    pivots = {e.pivot for e in estimates if e.pivot is not None}
    if len(pivots) > 1:
        raise ValueError("estimates were computed with different pivots")
    L, I, Lp, Ip = [], [], [], []
    for plan, est in zip(plans, estimates):
        if est.query_id != plan.query_id:
            raise ValueError(f"estimate for {est.query_id!r} paired with plan {plan.query_id!r}")
        L.append(actual_leaf_cost(plan, backbone))
        I.append(actual_internal_cost(plan, backbone))
        Lp.append(sum(c.contribution for c in est.per_operator.values() if c.source == MODEL))
        Ip.append(sum(c.contribution for c in est.per_operator.values() if c.source != MODEL))
    lam = next(iter(pivots)).lam if pivots else None
    return WorkloadDecomposition(np.array(L), np.array(I), np.array(Lp), np.array(Ip), lam)


@dataclass(frozen=True)
class CorrelationStats:
    eta: float
    eta_prime: float
    alpha: float
    beta: float
    gamma: float
    sigma_L: float
    sigma_I: float
    sigma_Lp: float
    sigma_Ip: float
    lam: Optional[float] = None

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["lambda"] = doc.pop("lam")
        return doc


def stats(d: WorkloadDecomposition) -> CorrelationStats:
    """Table of workload statistics.

    A constant leaf cost (``sd(L) == 0``) is allowed and gives ``eta = 0``;
    the correlations involving ``L`` are then reported as 0, which leaves the
    closed form for the plan-level correlation unchanged.
    """
    if len(d) < 2:
        raise ValueError("need at least 2 queries")
    s_L, s_I, s_Lp, s_Ip = (sample_sd(a) for a in (d.L, d.I, d.Lp, d.Ip))
    if s_I == 0:
        raise DegenerateVarianceError("I (actual internal cost)")
    if s_Ip == 0:
        raise DegenerateVarianceError("I' (estimated internal cost)")
    if s_L == 0:
        alpha = beta = 0.0
    else:
        alpha = pearson(d.L, d.I)
        beta = pearson(d.L, d.Ip)
    gamma = pearson(d.I, d.Ip)
    return CorrelationStats(
        eta=s_L / s_I,
        eta_prime=s_Lp / s_Ip,
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        sigma_L=s_L,
        sigma_I=s_I,
        sigma_Lp=s_Lp,
        sigma_Ip=s_Ip,
        lam=d.lam,
    )


# -- closed forms and bounds ------------------------------------------------


@dataclass(frozen=True)
class BoundTerms:
    A: float
    B: float
    C: float


def bound_terms(eta, alpha, beta, gamma) -> BoundTerms:
    q = eta * eta + 2 * alpha * eta + 1
    if not q > 0:
        raise DomainError(f"eta^2 + 2*alpha*eta + 1 = {q} is not positive")
    return BoundTerms(1.0 / math.sqrt(q), eta + alpha, beta * eta + gamma)


def rho_closed_form(eta, eta_p, alpha, beta, gamma) -> float:
    """Plan-level correlation corr(P, P') from the five workload statistics."""
    q1 = eta * eta + 2 * alpha * eta + 1
    q2 = eta_p * eta_p + 2 * beta * eta_p + 1
    if not (q1 > 0 and q2 > 0):
        raise DomainError("zero denominator in closed-form correlation")
    num = eta * eta_p + alpha * eta_p + beta * eta + gamma
    return num / (math.sqrt(q1) * math.sqrt(q2))


def rho_from_stats(s: CorrelationStats) -> float:
    return rho_closed_form(s.eta, s.eta_prime, s.alpha, s.beta, s.gamma)


def _check_nonneg(**values):
    for name, v in values.items():
        if not v >= 0:
            raise DomainError(f"{name} must be >= 0, got {v}")


def lower_bound_f(eta, eta_p) -> float:
    """Lower bound on corr(P, P') valid for any correlations."""
    _check_nonneg(eta=eta, eta_prime=eta_p)
    return (eta * eta_p - eta_p - eta - 1) / ((eta + 1) * (eta_p + 1))


def lower_bound_g(eta, eta_p) -> float:
    """Lower bound on corr(P, P') when alpha, beta, gamma are all nonnegative."""
    _check_nonneg(eta=eta, eta_prime=eta_p)
    return (eta / (eta + 1)) * (eta_p / (eta_p + 1))


def rho_approx(eta, alpha) -> float:
    """Limit of the closed form as eta' grows without bound.

    Evaluated as ``t / sqrt(t^2 + 1 - alpha^2)`` with ``t = eta + alpha``,
    which is algebraically the same as ``(eta + alpha) / sqrt(eta^2 + 2 alpha eta + 1)``.
    """
    if not -1 <= alpha <= 1:
        raise DomainError(f"alpha must lie in [-1, 1], got {alpha}")
    t = eta + alpha
    q = t * t + (1 - alpha * alpha)
    if q <= 0:
        raise DomainError(f"zero denominator at eta={eta}, alpha={alpha}")
    return t / math.sqrt(q)


def _check_eps(eps):
    if not 0 < eps < 1:
        raise DomainError(f"eps must lie in (0, 1), got {eps}")


def eta_0(alpha, eps) -> float:
    """Smallest eta for which ``rho_approx(eta, alpha) >= 1 - eps``."""
    _check_eps(eps)
    if not -1 <= alpha <= 1 - eps:
        raise DomainError(f"alpha must lie in [-1, 1 - eps] = [-1, {1 - eps}], got {alpha}")
    r = 1 - eps
    return math.sqrt((1 - alpha * alpha) / (1 / (r * r) - 1)) - alpha


def eta_0_max(eps) -> tuple:
    """Maximum of :func:`eta_0` over alpha, and the alpha that attains it."""
    _check_eps(eps)
    r = 1 - eps
    s = math.sqrt(1 - r * r)
    return 1 / s, -s


def eta_0_max_positive(eps) -> float:
    """Maximum of :func:`eta_0` over nonnegative alpha (attained at alpha = 0)."""
    _check_eps(eps)
    r = 1 - eps
    return r / math.sqrt(1 - r * r)


def eta_prime_0(eta, alpha, beta, gamma) -> float:
    """Stationary point of the closed form viewed as a function of eta'."""
    if not eta + alpha > 0:
        raise DomainError(f"need eta + alpha > 0, got {eta + alpha}")
    den = gamma - alpha * beta
    if den == 0:
        raise DomainError("no interior stationary point (gamma == alpha * beta)")
    return ((1 - beta * beta) * eta + (alpha - beta * gamma)) / den


@dataclass(frozen=True)
class RhoExtrema:
    """Behaviour of corr(P, P') as eta' ranges over [0, inf).

    ``rho_stationary`` is the value at ``eta_prime_0``; it is a maximum when
    ``gamma > alpha * beta`` and a minimum when ``gamma < alpha * beta``.
    ``rho_sup`` and ``rho_inf`` are the bounds over eta' >= 0 only.
    """

    eta_prime_0: float
    rho_stationary: float
    stationary_is_max: bool
    rho_at_0: float
    rho_at_inf: float
    rho_sup: float
    rho_inf: float

    def to_dict(self) -> dict:
        return asdict(self)


def rho_extrema_in_eta_prime(eta, alpha, beta, gamma) -> RhoExtrema:
    """Range of corr(P, P') over all eta' >= 0 for fixed eta, alpha, beta, gamma.

    Requires ``eta >= 1`` and ``0 < beta, gamma < 1``. The slope in eta' has
    the sign of ``(gamma - alpha*beta) * (eta_prime_0 - eta')``, so the
    stationary point is interior to [0, inf) and a maximum only when
    ``gamma > alpha*beta`` and ``eta_prime_0 >= 0``.
    """
    if not eta >= 1:
        raise DomainError(f"need eta >= 1, got {eta}")
    if not (0 < beta < 1 and 0 < gamma < 1):
        raise DomainError(f"need 0 < beta, gamma < 1, got beta={beta}, gamma={gamma}")
    if not -1 <= alpha <= 1:
        raise DomainError(f"alpha must lie in [-1, 1], got {alpha}")
    terms = bound_terms(eta, alpha, beta, gamma)
    at_0 = terms.A * terms.C
    at_inf = terms.A * terms.B
    ends = (min(at_0, at_inf), max(at_0, at_inf))
    den = gamma - alpha * beta
    if den == 0:
        # slope keeps one sign on [0, inf)
        return RhoExtrema(math.inf, at_inf, False, at_0, at_inf, ends[1], ends[0])
    ep0 = eta_prime_0(eta, alpha, beta, gamma)
    is_max = den > 0
    value = rho_closed_form(eta, ep0, alpha, beta, gamma)
    sup, inf = ends[1], ends[0]
    if ep0 >= 0:
        if is_max:
            sup = value
        else:
            inf = value
    return RhoExtrema(ep0, value, is_max, at_0, at_inf, sup, inf)
