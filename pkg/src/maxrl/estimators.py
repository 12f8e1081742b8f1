"""Finite-sample advantage rules for binary-reward policy gradients.

All functions operate on the last axis of a reward array, so a ``(tasks, N)``
matrix is handled in one call. Every rule returns a per-rollout scalar; the
policy gradient for a task is ``sum_i coeff_i * score_i``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from maxrl.objectives import Objective

DEFAULT_EPS = 1e-6


class CVMode(str, enum.Enum):
    """What the MaxRL estimator does with the control variate."""

    NONE = "none"
    KEEP_VN_ON_FAILURE = "keep_vn_on_failure"
    DROP_ALL_ON_FAILURE = "drop_all_on_failure"


@dataclass(frozen=True)
class EstimatorVariant:
    kind: Objective = Objective.MAXRL
    cv_mode: CVMode = CVMode.DROP_ALL_ON_FAILURE

    def __post_init__(self):
        object.__setattr__(self, "kind", Objective.parse(self.kind))
        object.__setattr__(self, "cv_mode", CVMode(self.cv_mode))


@dataclass(frozen=True)
class RewardBatch:
    """Binary rewards of ``N`` rollouts for one task (or a stack of tasks)."""

    rewards: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rewards, dtype=np.float64)
        if r.ndim == 0 or r.shape[-1] < 1:
            raise ValueError("a reward batch needs at least one rollout")
        if not np.all((r == 0.0) | (r == 1.0)):
            raise ValueError("rewards must be binary")
        object.__setattr__(self, "rewards", r)

    @property
    def n(self) -> int:
        return self.rewards.shape[-1]

    @property
    def k(self) -> np.ndarray:
        return self.rewards.sum(axis=-1)

    @property
    def mean(self) -> np.ndarray:
        return self.rewards.mean(axis=-1)

    @property
    def std(self) -> np.ndarray:
        mu = self.mean
        return np.sqrt(mu * (1.0 - mu))


def _as_batch(batch) -> RewardBatch:
    return batch if isinstance(batch, RewardBatch) else RewardBatch(batch)


def advantages(batch, variant: EstimatorVariant | Objective | str, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Per-rollout advantages for one of the sample-based objectives.

    REINFORCE subtracts the batch mean, RLOO the leave-one-out mean, GRPO
    divides the centred reward by the population std plus ``eps`` and MaxRL by
    the mean plus ``eps``. MaxRL returns zeros for tasks with no success.
    """
    if not isinstance(variant, EstimatorVariant):
        variant = EstimatorVariant(kind=variant)
    if eps < 0:
        raise ValueError("eps must be non-negative")
    b = _as_batch(batch)
    r, n = b.rewards, b.n
    mu = b.mean[..., None]
    kind = variant.kind
    if kind is Objective.REINFORCE:
        return r - mu
    if kind is Objective.RLOO:
        if n < 2:
            raise ValueError("RLOO needs at least two rollouts per task")
        others = (r.sum(axis=-1, keepdims=True) - r) / (n - 1)
        return r - others
    if kind is Objective.GRPO:
        centred = r - mu
        denom = b.std[..., None] + eps
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(centred == 0.0, 0.0, centred / np.where(denom == 0.0, 1.0, denom))
        return out
    if kind is Objective.MAXRL:
        solved = b.k[..., None] >= 1
        denom = np.where(solved, mu + eps, 1.0)
        return np.where(solved, (r - mu) / denom, 0.0)
    raise ValueError(f"{kind.value} has no sample-based advantage; use the exact-gradient path")


def maxrl_gradient_coefficients(batch, variant: EstimatorVariant | None = None) -> np.ndarray:
    """Coefficients ``c_i`` of the MaxRL estimator ``sum_i c_i S_i``.

    With ``cv_mode=none`` this is ``r_i / K`` (zero when ``K = 0``). The two
    control-variate modes subtract ``1/N`` from every rollout and differ only
    on all-failure tasks: ``keep_vn_on_failure`` leaves ``-1/N`` there, while
    ``drop_all_on_failure`` zeros the task.
    """
    variant = variant or EstimatorVariant()
    if variant.kind is not Objective.MAXRL:
        raise ValueError("coefficients are defined for MaxRL only")
    b = _as_batch(batch)
    r, n = b.rewards, b.n
    k = b.k[..., None]
    solved = k >= 1
    first = np.where(solved, r / np.where(solved, k, 1.0), 0.0)
    if variant.cv_mode is CVMode.NONE:
        return first
    centred = first - 1.0 / n
    if variant.cv_mode is CVMode.KEEP_VN_ON_FAILURE:
        return centred
    return np.where(solved, centred, 0.0)


def gradient_coefficients(batch, variant: EstimatorVariant, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Per-rollout coefficient on the score, i.e. the advantage over ``N``.

    This is what the trainers multiply into ``log pi`` terms. For MaxRL the
    control-variate mode decides how all-failure tasks are treated.
    """
    b = _as_batch(batch)
    if variant.kind is Objective.MAXRL and (eps == 0.0 or variant.cv_mode is not CVMode.DROP_ALL_ON_FAILURE):
        return maxrl_gradient_coefficients(b, variant)
    return advantages(b, variant, eps) / b.n


def batch_gradient(coeffs, scores) -> np.ndarray:
    """Fixed-order weighted sum of score vectors.

    ``coeffs`` has shape ``(N,)`` for one task or ``(B, N)`` for a batch, and
    ``scores`` the same leading shape plus the parameter dimension. A batch is
    reduced as ``1/B * sum_x sum_i c_i S_i``.
    """
    c = np.asarray(coeffs, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    if s.shape[: c.ndim] != c.shape:
        raise ValueError(f"coefficient shape {c.shape} does not match scores {s.shape}")
    if c.ndim not in (1, 2):
        raise ValueError("coefficients must be (N,) or (B, N)")
    tasks = c.reshape(-1, c.shape[-1])
    vecs = s.reshape(tasks.shape + s.shape[c.ndim:])
    total = np.zeros(s.shape[c.ndim:], dtype=np.float64)
    for ct, st in zip(tasks, vecs):
        acc = np.zeros_like(total)
        for ci, si in zip(ct, st):
            acc = acc + ci * si
        total = total + acc
    return total / tasks.shape[0] if c.ndim == 2 else total
