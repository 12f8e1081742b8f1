"""On-policy training of the synthetic softmax classifier.

A rollout is one class drawn from ``pi(.|x)``. Because every estimator's
per-rollout coefficient depends only on whether that draw was correct and on
the task's success count, ``N`` draws are taken as a multinomial count vector
and the surrogate loss is ``-sum_j W[x, j] log pi(j|x)`` with
``W[x, j] = count_j * coeff(j == y*)``. ExactML uses ``W = onehot(y*)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from maxrl import autodiff as ad
from maxrl.config import TrainConfig
from maxrl.estimators import EstimatorVariant, advantages
from maxrl.objectives import Objective, maxrl_weight, weight
from maxrl.optim import SGD, AdamW, ParameterVector, clip_grad_norm
from maxrl.tasks.classification import (
    ClassificationDataset,
    classifier_argmax_accuracy,
    classifier_logits,
    classifier_pass_at_k,
    classifier_probs,
    correct_probs,
    init_classifier,
    make_classification_dataset,
)
from maxrl.trainer.common import NumericFailure, make_optimizer, stream


def success_failure_coefficients(k: np.ndarray, n: int, variant: EstimatorVariant, eps: float):
    """Coefficient on a correct draw and on an incorrect draw, per task.

    Built by running the estimator on the sorted reward vector ``[1]*K + [0]*(N-K)``.
    """
    rewards = (np.arange(n)[None, :] < k[:, None]).astype(np.float64)
    coeff = advantages(rewards, variant, eps) / n
    a_s = np.where(k >= 1, coeff[:, 0], 0.0)
    a_f = np.where(k < n, coeff[:, -1], 0.0)
    return a_s, a_f


@dataclass
class ClassifierStep:
    loss: float
    grad_norm: float
    train_pass_rate: float
    train_reward: float
    frac_solved: float
    entropy: float
    updated: bool


class ClassifierTrainer:
    def __init__(self, config: TrainConfig, dataset: ClassificationDataset | None = None,
                 params: ParameterVector | None = None):
        c = config.classifier
        self.config = config
        self.data = dataset or make_classification_dataset(
            c.num_tasks, c.num_classes, c.profile, config.resolved_data_seed,
            dim=c.dim, noise=c.noise, heldout=c.heldout_tasks,
        )
        self.params = params or init_classifier(self.data.dim, self.data.num_classes, c.hidden, c.profile,
                                                seed=config.seed)
        self.optimizer: AdamW | SGD = make_optimizer(self.params, config.optimizer)
        self.variant = EstimatorVariant(config.objective, config.cv_mode)

    @property
    def step(self) -> int:
        return self.params.step

    @property
    def architecture(self) -> dict:
        c = self.config.classifier
        return {"kind": "mlp-classifier", "dim": self.data.dim, "hidden": c.hidden, "num_classes": self.data.num_classes}

    def batch_indices(self, step: int) -> np.ndarray:
        n = len(self.data)
        b = min(self.config.tasks_per_batch, n)
        per_epoch = max(n // b, 1)
        epoch, offset = divmod(step, per_epoch)
        perm = stream(self.config.seed, "classifier-order", epoch).permutation(n)
        return perm[offset * b : offset * b + b]

    def train_step(self) -> ClassifierStep:
        cfg = self.config
        idx = self.batch_indices(self.step)
        x, y = self.data.features[idx], self.data.labels[idx]
        b, n = len(idx), cfg.rollouts_per_task
        rows = np.arange(b)
        logits = classifier_logits(self.params, x)
        logp = ad.log_softmax(logits)
        probs = np.exp(logp.data)
        p_correct = probs[rows, y]
        if cfg.objective is Objective.EXACT_ML:
            w = np.zeros_like(probs)
            w[rows, y] = 1.0
            k = np.full(b, np.nan)
        else:
            rng = stream(cfg.seed, "classifier-rollouts", self.step)
            counts = rng.multinomial(n, probs / probs.sum(axis=1, keepdims=True)).astype(np.float64)
            k = counts[rows, y]
            a_s, a_f = success_failure_coefficients(k, n, self.variant, cfg.adv_eps)
            w = counts * a_f[:, None]
            w[rows, y] = k * a_s
        w = w / b
        entropy = -(probs * logp.data).sum(axis=1)
        has_signal = bool(np.any(w != 0.0)) or cfg.entropy_coeff != 0.0
        loss = -(logp * w).sum()
        if cfg.entropy_coeff:
            ent = -(ad.exp(logp) * logp).sum() * (1.0 / b)
            loss = loss - ent * cfg.entropy_coeff
        if not np.isfinite(loss.data):
            raise NumericFailure(f"non-finite loss at step {self.step}")
        self.params.zero_grad()
        norm = 0.0
        if has_signal:
            loss.backward()
            norm = clip_grad_norm(self.params, cfg.optimizer.grad_clip)
            self.optimizer.step()
        else:
            self.params.step += 1
        solved = float(np.mean(k >= 1)) if cfg.objective is not Objective.EXACT_ML else float("nan")
        reward = float(np.mean(k / n)) if cfg.objective is not Objective.EXACT_ML else float("nan")
        return ClassifierStep(float(loss.data), norm, float(p_correct.mean()), reward, solved,
                              float(entropy.mean()), has_signal)

    def evaluate(self, ks) -> dict:
        p = correct_probs(self.params, self.data.heldout_features, self.data.heldout_labels)
        probs = classifier_probs(self.params, self.data.heldout_features)
        out = {"pass_rate": float(p.mean())}
        out["pass_at_k"] = {str(k): float(np.mean(classifier_pass_at_k(p, k))) for k in ks}
        out["argmax_accuracy"] = classifier_argmax_accuracy(probs, self.data.heldout_labels)
        return out

    def gradient_scatter(self, count: int) -> list[dict]:
        """Per-task pass rate and population-gradient L2 norm on heldout tasks.

        The population gradient of each objective is ``w(p) grad p``; ``grad p``
        is obtained per task by backprop, ``w`` from the objective's weight
        function (order ``N-1`` for drop-all MaxRL, ``N`` otherwise).
        """
        cfg = self.config
        n = cfg.rollouts_per_task
        rows = []
        for i in range(min(count, len(self.data.heldout_labels))):
            x = self.data.heldout_features[i : i + 1]
            y = int(self.data.heldout_labels[i])
            self.params.zero_grad()
            prob = ad.softmax(classifier_logits(self.params, x))[0, y]
            prob.backward()
            g = float(np.sqrt(sum(float(np.sum(t.grad**2)) for _, t in self.params.items())))
            p = float(prob.data)
            rows.append({"task": i, "pass_rate": p, "grad_norm": g * _population_weight(cfg, p, n)})
        self.params.zero_grad()
        return rows


def _population_weight(cfg: TrainConfig, p: float, n: int) -> float:
    kind = cfg.objective
    if kind is Objective.MAXRL:
        order = n - 1 if cfg.cv_mode.value == "drop_all_on_failure" else n
        return maxrl_weight(p, order) if order >= 1 else 0.0
    if kind is Objective.REINFORCE:
        return 1.0 - 1.0 / n
    if kind is Objective.GRPO:
        p = min(max(p, 1e-12), 1.0 - 1e-12)
    if kind is Objective.EXACT_ML:
        p = max(p, 1e-300)
    return weight(kind, p)
