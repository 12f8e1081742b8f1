"""Exhaustive-enumeration checks of the estimator theory on tractable policies.

Two policy families are supported. :class:`BernoulliPolicy` has a scalar
success probability ``p(theta)`` with two possible scores. :class:`SoftmaxPolicy`
samples one of ``m`` classes from ``softmax(logits)``; any subset of classes may
count as success, which makes it a small latent-variable model where several
latent outcomes decode to the correct answer.

Expectations are exact: Bernoulli enumerates all ``2^N`` reward patterns, the
softmax oracle groups patterns by their success count and uses per-outcome
conditional score means computed by explicit summation over classes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Sequence

import numpy as np

from maxrl import autodiff as ad
from maxrl.estimators import CVMode, EstimatorVariant, advantages, maxrl_gradient_coefficients
from maxrl.objectives import Objective

MAX_BERNOULLI_N = 20
MAX_CATEGORICAL_M = 6
MAX_CATEGORICAL_N = 12


class EnumerationBudgetError(ValueError):
    pass


# -- policies ----------------------------------------------------------------


@dataclass
class BernoulliPolicy:
    """``p = sigmoid(features . theta)`` (or ``features . theta`` with ``link='linear'``)."""

    theta: np.ndarray
    features: np.ndarray
    link: str = "sigmoid"

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.link not in ("sigmoid", "linear"):
            raise ValueError(f"unknown link {self.link!r}")

    @classmethod
    def from_pass_rate(cls, p: float, dim: int = 3, seed: int = 0, link: str | None = None) -> "BernoulliPolicy":
        """A policy whose success probability is exactly ``p`` at its ``theta``."""
        rng = np.random.default_rng(seed)
        features = rng.standard_normal(dim)
        link = link or ("sigmoid" if 0.0 < p < 1.0 else "linear")
        direction = features / np.dot(features, features)
        target = math.log(p / (1.0 - p)) if link == "sigmoid" else p
        return cls(theta=target * direction, features=features, link=link)

    def _p_tensor(self, theta: ad.Tensor) -> ad.Tensor:
        z = ad.matmul(theta.reshape(1, -1), ad.Tensor(self.features.reshape(-1, 1))).reshape(())
        return ad.sigmoid(z) if self.link == "sigmoid" else z

    @property
    def p(self) -> float:
        return float(self._p_tensor(ad.Tensor(self.theta)).data)

    @property
    def grad_p(self) -> np.ndarray:
        theta = ad.Tensor(self.theta.copy(), requires_grad=True)
        self._p_tensor(theta).backward()
        return theta.grad

    def grad_log_p(self) -> np.ndarray:
        theta = ad.Tensor(self.theta.copy(), requires_grad=True)
        ad.log(self._p_tensor(theta)).backward()
        return theta.grad

    def outcome_scores(self) -> tuple[np.ndarray, np.ndarray]:
        """Scores ``grad log P(outcome)`` for success and failure draws."""
        p, g = self.p, self.grad_p
        succ = g / p if p > 0 else np.full_like(g, np.nan)
        fail = -g / (1.0 - p) if p < 1 else np.full_like(g, np.nan)
        return succ, fail


@dataclass
class SoftmaxPolicy:
    """Categorical policy over ``len(logits)`` outcomes; ``correct`` lists the successful ones."""

    logits: np.ndarray
    correct: Sequence[int] = (0,)

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        self.correct = tuple(sorted(set(int(c) for c in self.correct)))
        if not self.correct or min(self.correct) < 0 or max(self.correct) >= len(self.logits):
            raise ValueError("correct classes must be valid, non-empty indices")

    @property
    def m(self) -> int:
        return len(self.logits)

    @property
    def probs(self) -> np.ndarray:
        return ad.softmax_np(self.logits)

    @property
    def success_mask(self) -> np.ndarray:
        mask = np.zeros(self.m, dtype=bool)
        mask[list(self.correct)] = True
        return mask

    @property
    def p(self) -> float:
        return float(self.probs[self.success_mask].sum())

    def class_scores(self) -> np.ndarray:
        """Row ``j`` is ``grad_logits log pi(j)``, obtained by backprop."""
        rows = []
        for j in range(self.m):
            z = ad.Tensor(self.logits.copy(), requires_grad=True)
            ad.pick(ad.log_softmax(z), np.array(j)).backward()
            rows.append(z.grad)
        return np.array(rows)

    def _log_p(self, z: ad.Tensor) -> ad.Tensor:
        return ad.log(ad.softmax(z)[np.array(self.correct)].sum())

    @property
    def grad_p(self) -> np.ndarray:
        z = ad.Tensor(self.logits.copy(), requires_grad=True)
        ad.softmax(z)[np.array(self.correct)].sum().backward()
        return z.grad

    def grad_log_p(self) -> np.ndarray:
        z = ad.Tensor(self.logits.copy(), requires_grad=True)
        self._log_p(z).backward()
        return z.grad

    def conditional_score_moments(self) -> dict[str, tuple[np.ndarray, float]]:
        """Mean score and ``E||S||^2`` conditional on success and on failure."""
        pi = self.probs
        scores = self.class_scores()
        out = {}
        for key, mask in (("success", self.success_mask), ("failure", ~self.success_mask)):
            mass = pi[mask].sum()
            if mass == 0.0:
                out[key] = (np.zeros(self.m), 0.0)
                continue
            w = pi[mask] / mass
            mean_ = (w[:, None] * scores[mask]).sum(axis=0)
            sq = float((w * (scores[mask] ** 2).sum(axis=1)).sum())
            out[key] = (mean_, sq)
        return out


# -- estimator coefficients --------------------------------------------------


def estimator_coefficients(rewards: np.ndarray, variant: EstimatorVariant, normalization: str = "K") -> np.ndarray:
    """Per-rollout score coefficients for every row of a reward-pattern matrix.

    ``normalization="N"`` replaces MaxRL's ``1/K`` with ``1/N``; it exists only
    as a negative control for the oracle and turns MaxRL into plain REINFORCE.
    """
    n = rewards.shape[-1]
    if variant.kind is Objective.MAXRL:
        if normalization == "N":
            faulty = rewards / n
            if variant.cv_mode is CVMode.NONE:
                return faulty
            return faulty - 1.0 / n
        return maxrl_gradient_coefficients(rewards, variant)
    return advantages(rewards, variant, eps=0.0) / n


def _patterns(n: int) -> np.ndarray:
    return np.array(list(product((0.0, 1.0), repeat=n)), dtype=np.float64).reshape(-1, n)


# -- reports -------------------------------------------------------------------


@dataclass
class EnumerationReport:
    n: int
    p: float
    variant: EstimatorVariant
    expected_estimator: np.ndarray
    truncated_target: np.ndarray | None
    max_abs_error: float
    second_moment: float
    grad_p: np.ndarray = field(repr=False)

    @property
    def variance(self) -> float:
        return self.second_moment - float(np.dot(self.expected_estimator, self.expected_estimator))


def truncated_target(grad_p: np.ndarray, p: float, order: int) -> np.ndarray:
    """``sum_{k=1..order} (1/k) grad pass@k`` with ``grad pass@k = k (1-p)^(k-1) grad p``."""
    total = np.zeros_like(grad_p)
    for k in range(1, order + 1):
        grad_pass_k = k * (1.0 - p) ** (k - 1) * grad_p
        total = total + grad_pass_k / k
    return total


def target_for(variant: EstimatorVariant, grad_p: np.ndarray, p: float, n: int) -> np.ndarray | None:
    """Population gradient each estimator is unbiased for (``None`` if no closed form).

    The mean-baseline REINFORCE estimator carries a ``(1 - 1/N)`` shrinkage;
    MaxRL with the drop-all convention is unbiased for order ``N - 1``.
    """
    kind = variant.kind
    if kind is Objective.MAXRL:
        if variant.cv_mode is CVMode.DROP_ALL_ON_FAILURE:
            return truncated_target(grad_p, p, n - 1) if n > 1 else np.zeros_like(grad_p)
        return truncated_target(grad_p, p, n)
    if kind is Objective.REINFORCE:
        return (1.0 - 1.0 / n) * grad_p
    if kind is Objective.RLOO:
        return grad_p.copy()
    return None


def enumerate_expectation(policy: BernoulliPolicy, n: int, variant: EstimatorVariant | None = None,
                          normalization: str = "K") -> EnumerationReport:
    """Exact ``E[estimator]`` over all ``2^N`` reward patterns of a Bernoulli policy."""
    variant = variant or EstimatorVariant(Objective.MAXRL, CVMode.NONE)
    if not 1 <= n <= MAX_BERNOULLI_N:
        raise EnumerationBudgetError(f"N={n} outside exact-enumeration range 1..{MAX_BERNOULLI_N}")
    if variant.kind is Objective.RLOO and n < 2:
        raise EnumerationBudgetError("RLOO needs N >= 2")
    p = policy.p
    gp = policy.grad_p
    s_succ, s_fail = policy.outcome_scores()
    pats = _patterns(n)
    k = pats.sum(axis=1)
    prob = np.power(p, k) * np.power(1.0 - p, n - k)
    coeffs = estimator_coefficients(pats, variant, normalization)
    # per pattern the estimator is a_s * S_succ + a_f * S_fail
    a_s = (coeffs * pats).sum(axis=1)
    a_f = (coeffs * (1.0 - pats)).sum(axis=1)
    live_s = prob * a_s != 0.0
    live_f = prob * a_f != 0.0
    expected = np.zeros_like(gp)
    if live_s.any():
        expected = expected + float(np.sum(prob[live_s] * a_s[live_s])) * s_succ
    if live_f.any():
        expected = expected + float(np.sum(prob[live_f] * a_f[live_f])) * s_fail
    s_succ0 = np.nan_to_num(s_succ)
    s_fail0 = np.nan_to_num(s_fail)
    vals = a_s[:, None] * s_succ0[None, :] + a_f[:, None] * s_fail0[None, :]
    second = float(np.sum(prob * (vals * vals).sum(axis=1)))
    target = target_for(variant, gp, p, n)
    err = float(np.max(np.abs(expected - target))) if target is not None else math.nan
    return EnumerationReport(n, p, variant, expected, target, err, second, gp)


def categorical_enumeration(policy: SoftmaxPolicy, n: int, variant: EstimatorVariant | None = None,
                            normalization: str = "K") -> EnumerationReport:
    """Exact ``E[estimator]`` for a softmax policy, grouped by success count.

    Patterns with the same number of successes ``K`` are exchangeable, so they
    are summed once with multiplicity ``C(N, K)``. Given the rewards, the scores
    are independent with the conditional means of
    :meth:`SoftmaxPolicy.conditional_score_moments`.
    """
    variant = variant or EstimatorVariant(Objective.MAXRL, CVMode.NONE)
    if policy.m > MAX_CATEGORICAL_M or not 1 <= n <= MAX_CATEGORICAL_N:
        raise EnumerationBudgetError(f"categorical oracle limited to m<={MAX_CATEGORICAL_M}, N<={MAX_CATEGORICAL_N}")
    if variant.kind is Objective.RLOO and n < 2:
        raise EnumerationBudgetError("RLOO needs N >= 2")
    p = policy.p
    moments = policy.conditional_score_moments()
    mu_s, sq_s = moments["success"]
    mu_f, sq_f = moments["failure"]
    expected = np.zeros(policy.m)
    second = 0.0
    for k in range(n + 1):
        rewards = np.array([1.0] * k + [0.0] * (n - k))
        prob = math.comb(n, k) * p**k * (1.0 - p) ** (n - k)
        if prob == 0.0:
            continue
        c = estimator_coefficients(rewards[None, :], variant, normalization)[0]
        mean_vec = np.zeros(policy.m)
        spread = 0.0
        for ci, ri in zip(c, rewards):
            mu, sq = (mu_s, sq_s) if ri else (mu_f, sq_f)
            mean_vec = mean_vec + ci * mu
            spread += ci * ci * (sq - float(mu @ mu))
        expected = expected + prob * mean_vec
        second += prob * (float(mean_vec @ mean_vec) + spread)
    gp = policy.grad_p
    target = target_for(variant, gp, p, n)
    err = float(np.max(np.abs(expected - target))) if target is not None else math.nan
    return EnumerationReport(n, p, variant, expected, target, err, second, gp)


def brute_force_categorical(policy: SoftmaxPolicy, n: int, variant: EstimatorVariant) -> np.ndarray:
    """``E[estimator]`` by summing over all ``m^N`` class sequences (small cases only)."""
    if policy.m**n > 200_000:
        raise EnumerationBudgetError("too many raw sequences")
    pi = policy.probs
    scores = policy.class_scores()
    succ = policy.success_mask
    total = np.zeros(policy.m)
    for seq in product(range(policy.m), repeat=n):
        seq = np.array(seq)
        rewards = succ[seq].astype(np.float64)
        c = estimator_coefficients(rewards[None, :], variant)[0]
        total = total + np.prod(pi[seq]) * (c[:, None] * scores[seq]).sum(axis=0)
    return total


def conditional_form_check(policy: BernoulliPolicy | SoftmaxPolicy) -> float:
    """``max |E[score | success] - grad log p|``.

    The conditional mean is a probability-weighted sum of per-outcome scores;
    ``grad log p`` comes from differentiating ``log p(theta)`` directly.
    """
    if policy.p <= 0.0:
        raise ValueError("conditional form undefined at p = 0")
    if isinstance(policy, SoftmaxPolicy):
        cond = policy.conditional_score_moments()["success"][0]
    else:
        # two outcomes: only the success score survives the conditioning
        p = policy.p
        s_succ, _ = policy.outcome_scores()
        cond = (p * s_succ) / p
    return float(np.max(np.abs(cond - policy.grad_log_p())))


def dropped_term_bias(policy: BernoulliPolicy, n: int) -> np.ndarray:
    """Expected contribution removed by zeroing all-failure tasks.

    Equals ``E[keep_vn] - E[drop_all] = (1-p)^(N-1) grad p``; the drop-all
    estimator is therefore biased low by this amount relative to order ``N``.
    """
    keep = enumerate_expectation(policy, n, EstimatorVariant(Objective.MAXRL, CVMode.KEEP_VN_ON_FAILURE))
    drop = enumerate_expectation(policy, n, EstimatorVariant(Objective.MAXRL, CVMode.DROP_ALL_ON_FAILURE))
    return keep.expected_estimator - drop.expected_estimator


# -- grids ---------------------------------------------------------------------

DEFAULT_P_GRID = (0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99)


@dataclass
class GridCell:
    family: str
    p: float
    n: int
    cv_mode: str
    max_abs_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_abs_error < self.tolerance


def run_grid(p_grid: Sequence[float] = DEFAULT_P_GRID, n_values: Sequence[int] = range(1, 13),
             cv_modes: Sequence[CVMode | str] = (CVMode.NONE, CVMode.KEEP_VN_ON_FAILURE),
             tolerance: float = 1e-10, normalization: str = "K", categorical: bool = True,
             progress: Callable[[GridCell], None] | None = None) -> list[GridCell]:
    """Unbiasedness grid: every ``(p, N, cv_mode)`` cell for Bernoulli and softmax policies."""
    cells = []
    for cv in cv_modes:
        cv = CVMode(cv)
        variant = EstimatorVariant(Objective.MAXRL, cv)
        for p in p_grid:
            bern = BernoulliPolicy.from_pass_rate(p)
            soft = softmax_with_pass_rate(p, m=4) if categorical else None
            for n in n_values:
                rep = enumerate_expectation(bern, n, variant, normalization)
                cell = GridCell("bernoulli", p, n, cv.value, rep.max_abs_error, tolerance)
                cells.append(cell)
                if progress:
                    progress(cell)
                if soft is not None and n <= MAX_CATEGORICAL_N:
                    rep = categorical_enumeration(soft, n, variant, normalization)
                    cell = GridCell("softmax", p, n, cv.value, rep.max_abs_error, tolerance)
                    cells.append(cell)
                    if progress:
                        progress(cell)
    return cells


def softmax_with_pass_rate(p: float, m: int = 4, seed: int = 0, correct: Sequence[int] = (0,)) -> SoftmaxPolicy:
    """Random-logit softmax policy rescaled so the correct set has mass exactly ``p``."""
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal(m)
    mask = np.zeros(m, dtype=bool)
    mask[list(correct)] = True
    pi = ad.softmax_np(logits)
    ps, pf = pi[mask].sum(), pi[~mask].sum()
    logits = logits.copy()
    logits[mask] += math.log(p / ps)
    logits[~mask] += math.log((1.0 - p) / pf)
    return SoftmaxPolicy(logits, correct)
