"""Autoregressive maze policy: a small pre-norm causal transformer.

The prompt (the serialised maze) is shared by all rollouts of a task, so its
activations are computed once per task and broadcast to the ``N`` responses.
Output logits are restricted to the five action tokens, read off the tied
input embedding.

Two forward paths share the parameters: :func:`response_logits` builds an
autodiff graph over whole padded responses for training, and
:func:`sample` decodes token by token with a key/value cache in plain numpy.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from maxrl import autodiff as ad
from maxrl.optim import ParameterVector
from maxrl.tasks.maze import ACTION_IDS, VOCAB_SIZE, Tok

NEG = -1e9
NUM_ACTIONS = len(ACTION_IDS)
_ACTION_INDEX = np.full(VOCAB_SIZE, -1, dtype=np.int64)
_ACTION_INDEX[ACTION_IDS] = np.arange(NUM_ACTIONS)
DONE_INDEX = int(_ACTION_INDEX[int(Tok.DONE)])


def action_index(tokens: np.ndarray) -> np.ndarray:
    return _ACTION_INDEX[np.asarray(tokens, dtype=np.int64)]


@dataclass(frozen=True)
class PolicyConfig:
    vocab_size: int = VOCAB_SIZE
    d_model: int = 64
    n_heads: int = 2
    n_layers: int = 2
    d_ff: int = 256
    max_len: int = 512
    rms_eps: float = 1e-6

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)


def init_policy(config: PolicyConfig, seed: int) -> ParameterVector:
    if config.d_model % config.n_heads:
        raise ValueError("d_model must be divisible by n_heads")
    rng = np.random.default_rng(seed)
    d, f = config.d_model, config.d_ff
    std = 0.02
    out_std = std / math.sqrt(2 * config.n_layers)
    params = ParameterVector(seed=seed)
    params.add("embed", rng.normal(0.0, std, (config.vocab_size, d)))
    params.add("pos", rng.normal(0.0, std, (config.max_len, d)))
    for i in range(config.n_layers):
        params.add(f"l{i}.norm1", np.ones(d))
        params.add(f"l{i}.wq", rng.normal(0.0, std, (d, d)))
        params.add(f"l{i}.wk", rng.normal(0.0, std, (d, d)))
        params.add(f"l{i}.wv", rng.normal(0.0, std, (d, d)))
        params.add(f"l{i}.wo", rng.normal(0.0, out_std, (d, d)))
        params.add(f"l{i}.norm2", np.ones(d))
        params.add(f"l{i}.w1", rng.normal(0.0, std, (d, f)))
        params.add(f"l{i}.w2", rng.normal(0.0, out_std, (f, d)))
    params.add("norm_f", np.ones(d))
    return params


# -- autodiff path -------------------------------------------------------------


def _heads(x: ad.Tensor, config: PolicyConfig) -> ad.Tensor:
    b, l, _ = x.shape
    return x.reshape(b, l, config.n_heads, config.head_dim).transpose(0, 2, 1, 3)


def _merge(x: ad.Tensor) -> ad.Tensor:
    b, h, l, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, l, h * dh)


def _causal_mask(lq: int, lk: int, offset: int) -> np.ndarray:
    """Query ``i`` (absolute ``offset + i``) may see keys ``0 .. offset + i``."""
    q = np.arange(lq)[:, None] + offset
    k = np.arange(lk)[None, :]
    return np.where(k <= q, 0.0, NEG)


def response_logits(params: ParameterVector, config: PolicyConfig, prompts: np.ndarray,
                    responses: np.ndarray, n_per_task: int) -> ad.Tensor:
    """Action logits ``(B*N, Lr, 5)`` for every response position.

    ``prompts`` is ``(B, Lp)``; ``responses`` is ``(B*N, Lr)`` grouped by task
    (rows ``i*N .. i*N+N-1`` belong to prompt ``i``). Logit row ``t`` is the
    distribution of response token ``t`` given the prompt and tokens ``< t``.
    """
    prompts = np.asarray(prompts, dtype=np.int64)
    responses = np.asarray(responses, dtype=np.int64)
    b, lp = prompts.shape
    bn, lr = responses.shape
    if bn != b * n_per_task:
        raise ValueError("responses must hold n_per_task rows per prompt")
    if lp + lr > config.max_len:
        raise ValueError(f"sequence length {lp + lr} exceeds max_len {config.max_len}")
    scale = 1.0 / math.sqrt(config.head_dim)
    pos = params["pos"]
    xp = ad.embedding(params["embed"], prompts) + pos[np.arange(lp)]
    feed = responses[:, : lr - 1]
    has_resp = lr > 1
    if has_resp:
        xr = ad.embedding(params["embed"], feed) + pos[np.arange(lp, lp + lr - 1)]
        mask_r = np.concatenate([np.zeros((lr - 1, lp)), _causal_mask(lr - 1, lr - 1, 0)], axis=1)
    mask_p = _causal_mask(lp, lp, 0)
    for i in range(config.n_layers):
        g1 = params[f"l{i}.norm1"]
        hp = ad.rms_norm(xp, g1, config.rms_eps)
        qp = _heads(hp @ params[f"l{i}.wq"], config)
        kp = _heads(hp @ params[f"l{i}.wk"], config)
        vp = _heads(hp @ params[f"l{i}.wv"], config)
        att = ad.softmax((qp @ kp.transpose(0, 1, 3, 2)) * scale + mask_p)
        xp = xp + _merge(att @ vp) @ params[f"l{i}.wo"]
        if has_resp:
            hr = ad.rms_norm(xr, g1, config.rms_eps)
            qr = _heads(hr @ params[f"l{i}.wq"], config)
            kr = _heads(hr @ params[f"l{i}.wk"], config)
            vr = _heads(hr @ params[f"l{i}.wv"], config)
            keys = ad.concat([ad.repeat_rows(kp, n_per_task), kr], axis=2)
            vals = ad.concat([ad.repeat_rows(vp, n_per_task), vr], axis=2)
            att_r = ad.softmax((qr @ keys.transpose(0, 1, 3, 2)) * scale + mask_r)
            xr = xr + _merge(att_r @ vals) @ params[f"l{i}.wo"]
        g2 = params[f"l{i}.norm2"]
        xp = xp + ad.silu(ad.rms_norm(xp, g2, config.rms_eps) @ params[f"l{i}.w1"]) @ params[f"l{i}.w2"]
        if has_resp:
            xr = xr + ad.silu(ad.rms_norm(xr, g2, config.rms_eps) @ params[f"l{i}.w1"]) @ params[f"l{i}.w2"]
    last = ad.repeat_rows(xp[:, lp - 1 : lp, :], n_per_task)
    hidden = ad.concat([last, xr], axis=1) if has_resp else last
    hidden = ad.rms_norm(hidden, params["norm_f"], config.rms_eps)
    head = params["embed"][ACTION_IDS]
    return hidden @ head.T


def sequence_log_probs(logits: ad.Tensor, responses: np.ndarray, mask: np.ndarray):
    """Per-token log-probs of the taken actions and per-position entropies."""
    logp = ad.log_softmax(logits)
    idx = np.where(mask, action_index(responses), 0)
    taken = ad.pick(logp, idx) * mask
    ent = -(ad.exp(logp) * logp).sum(axis=-1) * mask
    return taken, ent


# -- numpy inference -------------------------------------------------------------


def _rms(x, g, eps):
    return ad.rms_norm_np(x, g, eps)


def _silu(x):
    return x * ad._sigmoid(x)


class _Weights:
    def __init__(self, params: ParameterVector):
        self.a = {k: v for k, v in params.arrays().items()}

    def __getitem__(self, k):
        return self.a[k]


def _prompt_pass(w: _Weights, config: PolicyConfig, prompts: np.ndarray):
    b, lp = prompts.shape
    h_, dh = config.n_heads, config.head_dim
    x = w["embed"][prompts] + w["pos"][:lp]
    mask = _causal_mask(lp, lp, 0)
    kvs = []
    for i in range(config.n_layers):
        hn = _rms(x, w[f"l{i}.norm1"], config.rms_eps)
        q = (hn @ w[f"l{i}.wq"]).reshape(b, lp, h_, dh).transpose(0, 2, 1, 3)
        k = (hn @ w[f"l{i}.wk"]).reshape(b, lp, h_, dh).transpose(0, 2, 1, 3)
        v = (hn @ w[f"l{i}.wv"]).reshape(b, lp, h_, dh).transpose(0, 2, 1, 3)
        att = ad.softmax_np(q @ k.transpose(0, 1, 3, 2) / math.sqrt(dh) + mask)
        x = x + (att @ v).transpose(0, 2, 1, 3).reshape(b, lp, -1) @ w[f"l{i}.wo"]
        x = x + _silu(_rms(x, w[f"l{i}.norm2"], config.rms_eps) @ w[f"l{i}.w1"]) @ w[f"l{i}.w2"]
        kvs.append((k, v))
    return x[:, -1, :], kvs


def _head_logits(w: _Weights, config: PolicyConfig, x: np.ndarray) -> np.ndarray:
    return _rms(x, w["norm_f"], config.rms_eps) @ w["embed"][ACTION_IDS].T


@dataclass
class Rollouts:
    tokens: np.ndarray  # (B*N, L) action token ids, PAD after termination
    mask: np.ndarray  # (B*N, L) 1.0 on generated positions
    log_probs: np.ndarray  # (B*N, L) sampling-time log-probs
    lengths: np.ndarray  # (B*N,)
    terminated: np.ndarray  # (B*N,) ended with DONE
    entropy: np.ndarray  # (B*N, L) entropy of the sampling distribution per position

    @property
    def n_rows(self) -> int:
        return self.tokens.shape[0]

    def actions(self, row: int) -> list[int]:
        return [int(t) for t in self.tokens[row, : self.lengths[row]]]


def sample(params: ParameterVector, config: PolicyConfig, prompts: np.ndarray, n_per_task: int,
           max_new: int, rng: np.random.Generator, temperature: float = 1.0) -> Rollouts:
    """Draw ``n_per_task`` action sequences per prompt until DONE or ``max_new`` tokens."""
    prompts = np.asarray(prompts, dtype=np.int64)
    b, lp = prompts.shape
    if lp + max_new - 1 > config.max_len:
        raise ValueError("max_new exceeds the positional table")
    w = _Weights(params)
    bn = b * n_per_task
    h_, dh = config.n_heads, config.head_dim
    last, kvs = _prompt_pass(w, config, prompts)
    pk = [np.repeat(k, n_per_task, axis=0) for k, _ in kvs]
    pv = [np.repeat(v, n_per_task, axis=0) for _, v in kvs]
    ck = [np.zeros((bn, h_, max_new, dh)) for _ in range(config.n_layers)]
    cv = [np.zeros((bn, h_, max_new, dh)) for _ in range(config.n_layers)]
    tokens = np.full((bn, max_new), int(Tok.PAD), dtype=np.int64)
    logps = np.zeros((bn, max_new))
    ents = np.zeros((bn, max_new))
    mask = np.zeros((bn, max_new))
    active = np.arange(bn)
    x_last = np.repeat(last, n_per_task, axis=0)
    scale = 1.0 / math.sqrt(dh)
    for t in range(max_new):
        logits = _head_logits(w, config, x_last) / temperature
        lp_all = ad.log_softmax_np(logits)
        u = rng.random(len(active))
        probs = np.exp(lp_all)
        ents[active, t] = -(probs * lp_all).sum(axis=-1)
        cdf = np.cumsum(probs, axis=-1)
        choice = np.minimum((cdf < (u * cdf[:, -1])[:, None]).sum(axis=-1), NUM_ACTIONS - 1)
        tokens[active, t] = ACTION_IDS[choice]
        logps[active, t] = lp_all[np.arange(len(active)), choice]
        mask[active, t] = 1.0
        keep = choice != DONE_INDEX
        active = active[keep]
        if len(active) == 0 or t == max_new - 1:
            break
        x = w["embed"][tokens[active, t]] + w["pos"][lp + t]
        for i in range(config.n_layers):
            hn = _rms(x, w[f"l{i}.norm1"], config.rms_eps)
            q = (hn @ w[f"l{i}.wq"]).reshape(-1, h_, 1, dh)
            ck[i][active, :, t, :] = (hn @ w[f"l{i}.wk"]).reshape(-1, h_, dh)
            cv[i][active, :, t, :] = (hn @ w[f"l{i}.wv"]).reshape(-1, h_, dh)
            keys = np.concatenate([pk[i][active], ck[i][active, :, : t + 1]], axis=2)
            vals = np.concatenate([pv[i][active], cv[i][active, :, : t + 1]], axis=2)
            att = ad.softmax_np(q @ keys.transpose(0, 1, 3, 2) * scale)
            x = x + (att @ vals).reshape(-1, h_ * dh) @ w[f"l{i}.wo"]
            x = x + _silu(_rms(x, w[f"l{i}.norm2"], config.rms_eps) @ w[f"l{i}.w1"]) @ w[f"l{i}.w2"]
        x_last = x
    lengths = mask.sum(axis=1).astype(np.int64)
    width = max(int(lengths.max()), 1)
    terminated = tokens[np.arange(bn), np.maximum(lengths - 1, 0)] == int(Tok.DONE)
    return Rollouts(tokens[:, :width], mask[:, :width], logps[:, :width], lengths, terminated, ents[:, :width])
