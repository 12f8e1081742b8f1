"""Parameter containers, optimizers and gradient clipping."""

from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator, Mapping

import numpy as np

from maxrl.autodiff import Tensor


class NonFiniteGradient(FloatingPointError):
    """Raised instead of applying an update computed from NaN/inf gradients."""


class ParameterVector:
    """Named parameter tensors plus the step counter and seed that produced them."""

    def __init__(self, params: Mapping[str, np.ndarray] | None = None, step: int = 0, seed: int | None = None):
        self._tensors: OrderedDict[str, Tensor] = OrderedDict()
        self.step = step
        self.seed = seed
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> Tensor:
        if name in self._tensors:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def names(self) -> list[str]:
        return list(self._tensors)

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self._tensors.values())

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.zero_grad()

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, t.data) for k, t in self._tensors.items())

    def grads(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, t.grad) for k, t in self._tensors.items())

    def flat(self) -> np.ndarray:
        return np.concatenate([t.data.ravel() for t in self._tensors.values()])

    def flat_grad(self) -> np.ndarray:
        return np.concatenate([t.grad.ravel() for t in self._tensors.values()])

    def copy(self) -> "ParameterVector":
        return ParameterVector({k: t.data.copy() for k, t in self._tensors.items()}, step=self.step, seed=self.seed)

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        for name, t in self._tensors.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != t.shape:
                raise ValueError(f"shape mismatch for {name}: {value.shape} vs {t.shape}")
            t.data = value.copy()


def global_grad_norm(params: ParameterVector) -> float:
    total = math.fsum(float(np.sum(t.grad * t.grad)) for _, t in params.items())
    return math.sqrt(total)


def clip_grad_norm(params: ParameterVector, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    norm = global_grad_norm(params)
    if not math.isfinite(norm):
        raise NonFiniteGradient(f"gradient norm is {norm}")
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for _, t in params.items():
            t.grad = t.grad * scale
    return norm


def _check_finite(params: ParameterVector) -> None:
    bad = [name for name, t in params.items() if not np.all(np.isfinite(t.grad))]
    if bad:
        raise NonFiniteGradient(f"non-finite gradient in {', '.join(bad)}; step rejected")


class AdamW:
    """Adam with bias-corrected moments and decoupled weight decay."""

    def __init__(self, params: ParameterVector, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self) -> None:
        _check_finite(self.params)
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            if self.weight_decay:
                p.data = p.data * (1.0 - self.lr * self.weight_decay)
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        self.params.step += 1

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"m.{k}": v for k, v in self.m.items()}
        out.update({f"v.{k}": v for k, v in self.v.items()})
        return out

    def state_meta(self) -> dict:
        return {"type": "adamw", "t": self.t}

    def load_state(self, meta: dict, arrays: Mapping[str, np.ndarray]) -> None:
        self.t = int(meta["t"])
        for k in self.m:
            self.m[k] = np.asarray(arrays[f"m.{k}"], dtype=np.float64).copy()
            self.v[k] = np.asarray(arrays[f"v.{k}"], dtype=np.float64).copy()


def adamw_step(params: ParameterVector, state: AdamW | None = None, lr: float = 1e-3, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0) -> AdamW:
    """Apply one AdamW update; creates optimizer state on first use."""
    if state is None:
        state = AdamW(params, lr, beta1, beta2, eps, weight_decay)
    state.step()
    return state


class SGD:
    """SGD with heavy-ball momentum (no Nesterov)."""

    def __init__(self, params: ParameterVector, lr: float = 0.1, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.t = 0
        self.buf = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self) -> None:
        _check_finite(self.params)
        self.t += 1
        for name, p in self.params.items():
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            b = self.buf[name] = self.momentum * self.buf[name] + g
            p.data = p.data - self.lr * b
        self.params.step += 1

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {f"buf.{k}": v for k, v in self.buf.items()}

    def state_meta(self) -> dict:
        return {"type": "sgd", "t": self.t}

    def load_state(self, meta: dict, arrays: Mapping[str, np.ndarray]) -> None:
        self.t = int(meta["t"])
        for k in self.buf:
            self.buf[k] = np.asarray(arrays[f"buf.{k}"], dtype=np.float64).copy()
