"""Synthetic softmax classification: a stand-in for large-label image tasks.

Each task is a fixed feature vector drawn around one of ``m`` random class
prototypes; the policy is a one-hidden-layer perceptron producing class
logits. With the ``uniform-hard`` profile the output layer starts at zero, so
every task has initial pass rate exactly ``1/m``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from maxrl import autodiff as ad
from maxrl.optim import ParameterVector

PROFILES = ("uniform-hard", "random-init")


@dataclass(frozen=True)
class ClassificationDataset:
    num_classes: int
    features: np.ndarray
    labels: np.ndarray
    heldout_features: np.ndarray
    heldout_labels: np.ndarray
    profile: str
    seed: int

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return len(self.labels)


def make_classification_dataset(num_tasks: int, m: int, profile: str = "uniform-hard", seed: int = 0,
                                dim: int = 32, noise: float = 0.5, heldout: int | None = None) -> ClassificationDataset:
    if profile not in PROFILES:
        raise ValueError(f"unknown difficulty profile {profile!r}; expected one of {PROFILES}")
    if m < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    heldout = max(m, num_tasks // 5) if heldout is None else heldout
    prototypes = rng.standard_normal((m, dim))
    total = num_tasks + heldout
    # balanced labels, shuffled
    labels = np.resize(np.arange(m), total)
    rng.shuffle(labels)
    feats = prototypes[labels] + noise * rng.standard_normal((total, dim))
    return ClassificationDataset(
        num_classes=m,
        features=feats[:num_tasks],
        labels=labels[:num_tasks].astype(np.int64),
        heldout_features=feats[num_tasks:],
        heldout_labels=labels[num_tasks:].astype(np.int64),
        profile=profile,
        seed=seed,
    )


def init_classifier(dim: int, num_classes: int, hidden: int = 128, profile: str = "uniform-hard",
                    seed: int = 0) -> ParameterVector:
    rng = np.random.default_rng(seed)
    params = ParameterVector(seed=seed)
    params.add("w1", rng.standard_normal((dim, hidden)) / np.sqrt(dim))
    params.add("b1", np.zeros(hidden))
    if profile == "uniform-hard":
        params.add("w2", np.zeros((hidden, num_classes)))
    else:
        params.add("w2", rng.standard_normal((hidden, num_classes)) / np.sqrt(hidden))
    params.add("b2", np.zeros(num_classes))
    return params


def classifier_logits(params: ParameterVector, x) -> ad.Tensor:
    h = ad.tanh(ad.matmul(ad.Tensor(x), params["w1"]) + params["b1"])
    return ad.matmul(h, params["w2"]) + params["b2"]


def classifier_probs(params: ParameterVector, x: np.ndarray) -> np.ndarray:
    h = np.tanh(x @ params["w1"].data + params["b1"].data)
    return ad.softmax_np(h @ params["w2"].data + params["b2"].data)


def classifier_pass_at_k(prob_correct, k: int):
    """Analytic pass@k ``1 - (1 - pi(y*|x))^k``; vectorised over tasks."""
    p = np.asarray(prob_correct, dtype=np.float64)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    # k = 1 is returned as-is: 1 - (1 - p) would round
    out = p.copy() if k == 1 else 1.0 - np.power(1.0 - p, k)
    return float(out) if out.ndim == 0 else out


def classifier_argmax_accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of tasks whose argmax class is correct; ties go to the lowest index."""
    probs = np.asarray(probs)
    if probs.shape[0] == 0:
        raise ValueError("empty evaluation set")
    return float(np.mean(np.argmax(probs, axis=-1) == np.asarray(labels)))


def correct_probs(params: ParameterVector, x: np.ndarray, labels: np.ndarray) -> np.ndarray:
    probs = classifier_probs(params, x)
    return probs[np.arange(len(labels)), labels]
