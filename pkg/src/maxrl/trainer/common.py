from __future__ import annotations

import zlib

import numpy as np

from maxrl.config import OptimizerConfig
from maxrl.optim import SGD, AdamW, ParameterVector


class NumericFailure(FloatingPointError):
    """A loss or gradient went non-finite; the step was not applied."""


def stream_seed(seed: int, name: str, *index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), zlib.crc32(name.encode()), *[int(i) for i in index]])


def stream(seed: int, name: str, *index: int) -> np.random.Generator:
    """Independent RNG stream keyed by ``(seed, name, index...)``.

    Every random draw in training goes through one of these, so any step can
    be replayed without carrying generator state around.
    """
    return np.random.default_rng(stream_seed(seed, name, *index))


def stream_int(seed: int, name: str, *index: int) -> int:
    return int(stream_seed(seed, name, *index).generate_state(1, dtype=np.uint32)[0])


def make_optimizer(params: ParameterVector, cfg: OptimizerConfig, lr: float | None = None):
    lr = cfg.lr if lr is None else lr
    if cfg.name == "sgd":
        return SGD(params, lr=lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    return AdamW(params, lr=lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps, weight_decay=cfg.weight_decay)
