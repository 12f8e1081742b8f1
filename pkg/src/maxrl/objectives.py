"""Closed-form functions of the per-task pass rate.

Everything here is scalar float64 math: the objectives (expected reward,
truncated log-likelihood, exact log-likelihood), pass@k algebra and the
population weight functions ``w(p)`` such that the population gradient of
each objective is ``w(p) * grad p``.
"""

from __future__ import annotations

import enum
import math
from typing import Iterable

INF = math.inf

# below this pass rate the truncated weight is summed term by term
_GEOMETRIC_CUTOFF = 1e-8
_GEOMETRIC_MAX_TERMS = 100_000


class DomainError(ValueError):
    """A function was evaluated at a point where it is singular or undefined."""


class Objective(str, enum.Enum):
    REINFORCE = "reinforce"
    RLOO = "rloo"
    GRPO = "grpo"
    MAXRL = "maxrl"
    EXACT_ML = "ml"

    @classmethod
    def parse(cls, value: "str | Objective") -> "Objective":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {"rl": cls.REINFORCE, "exactml": cls.EXACT_ML, "exact_ml": cls.EXACT_ML, "ce": cls.EXACT_ML}
        if key in aliases:
            return aliases[key]
        return cls(key)


def _check_p(p: float) -> float:
    p = float(p)
    if not (0.0 <= p <= 1.0) or math.isnan(p):
        raise DomainError(f"pass rate must lie in [0, 1], got {p!r}")
    return p


def _check_order(T: float) -> float:
    if T == INF:
        return INF
    if int(T) != T or T < 1:
        raise DomainError(f"truncation order must be a positive integer or INF, got {T!r}")
    return int(T)


def pass_at_k(p: float, k: int) -> float:
    """Probability that at least one of ``k`` i.i.d. samples is correct."""
    p = _check_p(p)
    if int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")
    return 1.0 - fail_at_k(p, k)


def fail_at_k(p: float, k: int) -> float:
    p = _check_p(p)
    if int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")
    if p == 1.0:
        return 0.0
    return math.exp(k * math.log1p(-p))


def objective_value(kind: "Objective | str", p: float, T: float = INF) -> float:
    """Value of the per-task objective at pass rate ``p``.

    REINFORCE and RLOO both target the pass rate itself. MaxRL of order ``T``
    is ``-sum_{k<=T} (1-p)^k / k``, which stays finite at ``p = 0`` for finite
    ``T``; with ``T = INF`` it is the log-likelihood. GRPO has no objective of
    its own in the estimator literature; we return ``2 asin(sqrt p)``, the
    antiderivative of its weight function, so that ``d/dp`` agrees with
    :func:`weight`.
    """
    kind = Objective.parse(kind)
    p = _check_p(p)
    if kind in (Objective.REINFORCE, Objective.RLOO):
        return p
    if kind is Objective.GRPO:
        return 2.0 * math.asin(math.sqrt(p))
    if kind is Objective.EXACT_ML:
        return _log_p(p)
    T = _check_order(T)
    if T == INF:
        return _log_p(p)
    q = 1.0 - p
    return -math.fsum(q**k / k for k in range(1, T + 1))


def _log_p(p: float) -> float:
    if p == 0.0:
        raise DomainError("log-likelihood is -inf at p = 0")
    return math.log(p)


def weight(kind: "Objective | str", p: float, T: float = INF) -> float:
    """Population weight ``w(p)`` with ``grad J = w(p) * grad p``."""
    kind = Objective.parse(kind)
    p = _check_p(p)
    if kind in (Objective.REINFORCE, Objective.RLOO):
        return 1.0
    if kind is Objective.GRPO:
        if p in (0.0, 1.0):
            raise DomainError(f"GRPO weight is singular at p = {p}")
        return 1.0 / math.sqrt(p * (1.0 - p))
    if kind is Objective.EXACT_ML:
        if p == 0.0:
            raise DomainError("ML weight 1/p is singular at p = 0")
        return 1.0 / p
    return maxrl_weight(p, T)


def maxrl_weight(p: float, T: float) -> float:
    """``(1 - (1-p)^T) / p``; equals ``T`` at ``p = 0`` and ``1/p`` for ``T = INF``."""
    p = _check_p(p)
    T = _check_order(T)
    if T == INF:
        if p == 0.0:
            raise DomainError("untruncated weight is singular at p = 0")
        return 1.0 / p
    if p == 0.0:
        return float(T)
    if p == 1.0 or T == 1:
        return 1.0
    if p < _GEOMETRIC_CUTOFF and T <= _GEOMETRIC_MAX_TERMS:
        return geometric_weight(p, T)
    # -expm1(T log1p(-p)) = 1 - (1-p)^T without cancellation
    return -math.expm1(T * math.log1p(-p)) / p


def geometric_weight(p: float, T: int) -> float:
    """The truncated weight written as ``sum_{k=1..T} (1-p)^(k-1)``."""
    p = _check_p(p)
    T = _check_order(T)
    if T == INF:
        raise DomainError("geometric form needs a finite order")
    if p == 1.0:
        return 1.0
    # exp((k-1) log1p(-p)) avoids compounding the rounding error of 1 - p
    lq = math.log1p(-p)
    return math.fsum(math.exp((k - 1) * lq) for k in range(1, T + 1))


def truncated_gradient_weight_identity_check(p: float, T: int, tol: float = 1e-12) -> bool:
    """Check the geometric sum against the closed form at one ``(p, T)``."""
    return abs(geometric_weight(p, T) - maxrl_weight(p, T)) <= tol


def maclaurin_tail_bound(p: float, T: int) -> float:
    """Upper bound on ``|J_T(p) - log p|`` from the geometric tail."""
    p = _check_p(p)
    if p == 0.0:
        return INF
    return (1.0 - p) ** (T + 1) / ((T + 1) * p)


def weight_table(p_grid: Iterable[float], orders: Iterable[int]) -> list[dict[str, float]]:
    """Rows of ``(p, w_RL, w_GRPO, w_MaxRL(T)..., w_ML)`` over a pass-rate grid."""
    orders = list(orders)
    rows = []
    for p in p_grid:
        row = {"p": float(p), "w_rl": weight(Objective.REINFORCE, p)}
        row["w_grpo"] = weight(Objective.GRPO, p) if 0.0 < p < 1.0 else math.nan
        for T in orders:
            row[f"w_maxrl_T{T}"] = maxrl_weight(p, T)
        row["w_ml"] = weight(Objective.EXACT_ML, p) if p > 0.0 else math.nan
        rows.append(row)
    return rows


def default_p_grid(points: int = 1000, lo: float = 0.001, hi: float = 0.999) -> list[float]:
    if points < 2:
        return [lo]
    step = (hi - lo) / (points - 1)
    return [lo + i * step for i in range(points)]
