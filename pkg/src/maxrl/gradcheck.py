"""Finite-difference checks for every differentiable op in :mod:`maxrl.autodiff`.

Each entry of :data:`OP_CASES` builds random inputs for one op and returns a
function mapping those inputs to an output tensor. The check projects the
output onto a fixed random direction to get a scalar, backpropagates, and
compares every input gradient with central differences.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from maxrl import autodiff as ad

Builder = Callable[[np.random.Generator], tuple[list[np.ndarray], Callable[..., ad.Tensor]]]


def _positive(rng, shape, lo=0.5, hi=2.0):
    return rng.uniform(lo, hi, shape)


def _signed_away_from_zero(rng, shape):
    return rng.uniform(0.5, 2.0, shape) * rng.choice([-1.0, 1.0], shape)


OP_CASES: dict[str, Builder] = {
    "add": lambda r: ([r.normal(size=(3, 4)), r.normal(size=(4,))], lambda a, b: a + b),
    "sub": lambda r: ([r.normal(size=(3, 4)), r.normal(size=(3, 1))], lambda a, b: a - b),
    "neg": lambda r: ([r.normal(size=(5,))], lambda a: -a),
    "mul": lambda r: ([r.normal(size=(2, 3)), r.normal(size=(1, 3))], lambda a, b: a * b),
    "div": lambda r: ([r.normal(size=(2, 3)), _signed_away_from_zero(r, (2, 3))], lambda a, b: a / b),
    "reciprocal": lambda r: ([_signed_away_from_zero(r, (4,))], ad.reciprocal),
    "exp": lambda r: ([r.normal(size=(3, 2))], ad.exp),
    "log": lambda r: ([_positive(r, (3, 2))], ad.log),
    "tanh": lambda r: ([r.normal(size=(6,))], ad.tanh),
    "sigmoid": lambda r: ([r.normal(size=(6,))], ad.sigmoid),
    "silu": lambda r: ([r.normal(size=(2, 5))], ad.silu),
    "sum": lambda r: ([r.normal(size=(3, 4))], lambda a: a.sum(axis=1, keepdims=True)),
    "mean": lambda r: ([r.normal(size=(3, 4))], lambda a: a.mean(axis=0)),
    "reshape": lambda r: ([r.normal(size=(2, 6))], lambda a: a.reshape(3, 4)),
    "transpose": lambda r: ([r.normal(size=(2, 3, 4))], lambda a: a.transpose(2, 0, 1)),
    "getitem": lambda r: ([r.normal(size=(4, 5))], lambda a: a[np.array([0, 2, 2]), 1:4]),
    "concat": lambda r: ([r.normal(size=(2, 3)), r.normal(size=(2, 2))], lambda a, b: ad.concat([a, b], axis=1)),
    "take": lambda r: ([r.normal(size=(4, 3))], lambda a: ad.take(a, [3, 0, 3, 1], axis=0)),
    "repeat_rows": lambda r: ([r.normal(size=(2, 3))], lambda a: ad.repeat_rows(a, 3)),
    "embedding": lambda r: ([r.normal(size=(6, 4))], lambda w: ad.embedding(w, np.array([[1, 5, 1], [0, 2, 5]]))),
    "pick": lambda r: ([r.normal(size=(3, 5))], lambda a: ad.pick(a, np.array([4, 0, 4]))),
    "matmul": lambda r: ([r.normal(size=(2, 3, 4)), r.normal(size=(4, 2))], lambda a, b: a @ b),
    "softmax": lambda r: ([r.normal(size=(3, 5))], ad.softmax),
    "log_softmax": lambda r: ([r.normal(size=(3, 5))], ad.log_softmax),
    "rms_norm": lambda r: ([r.normal(size=(3, 6)), _positive(r, (6,))], lambda x, g: ad.rms_norm(x, g)),
}


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)`` (0 when both vanish)."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_op(name: str, rng: np.random.Generator, h: float = 1e-5) -> float:
    """Worst relative gradient error over the inputs of one random instance of ``name``."""
    arrays, fn = OP_CASES[name](rng)
    out_shape = fn(*[ad.Tensor(a) for a in arrays]).shape
    direction = rng.normal(size=out_shape)

    def scalar() -> float:
        return float((fn(*[ad.Tensor(a) for a in arrays]).data * direction).sum())

    leaves = [ad.Tensor(a.copy(), requires_grad=True) for a in arrays]
    (fn(*leaves) * direction).sum().backward()
    worst = 0.0
    for leaf, arr in zip(leaves, arrays):
        numeric = ad.numerical_gradient(scalar, arr, h)
        worst = max(worst, relative_error(leaf.grad, numeric))
    return worst
