"""On-policy RL (and the supervised warm-up) for the maze policy.

One step samples ``N`` rollouts for each of ``B`` tasks, scores them with
:func:`verify_path`, turns rewards into per-rollout advantages and takes a
single optimizer step on

    loss = -(1/T) sum_i A_i sum_t log pi(a_it | ...) - entropy_coeff * H

where ``T`` is the number of generated tokens in the batch and ``H`` the mean
per-position entropy. Log-probs are recomputed from the same parameters that
sampled the rollouts, so the importance ratio is identically one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from maxrl import autodiff as ad
from maxrl.config import SFTConfig, TrainConfig
from maxrl.estimators import EstimatorVariant, gradient_coefficients
from maxrl.metrics import pass_at_k_estimate
from maxrl.optim import AdamW, NonFiniteGradient, ParameterVector, SGD, clip_grad_norm
from maxrl.policy import PolicyConfig, Rollouts, init_policy, response_logits, sample, sequence_log_probs
from maxrl.tasks.maze import Maze, Tok, generate_maze, generate_mazes, prompt_length, shortest_path, tokenize_maze, verify_path
from maxrl.trainer.common import NumericFailure, make_optimizer, stream, stream_int

# rows x positions per autodiff micro-batch; bounds peak memory of the graph
MICRO_BUDGET = 64 * 96
EVAL_ROWS = 512


class SFTFloorError(RuntimeError):
    """Supervised warm-up finished without reaching the pass@1 floor."""

    def __init__(self, message: str, history: list[dict]):
        super().__init__(message)
        self.history = history


def policy_config_for(cfg: TrainConfig) -> PolicyConfig:
    m = cfg.model
    return PolicyConfig(d_model=m.d_model, n_heads=m.n_heads, n_layers=m.n_layers, d_ff=m.d_ff,
                        max_len=prompt_length(cfg.maze.side) + cfg.maze.max_new)


def heldout_mazes(cfg: TrainConfig) -> list[Maze]:
    return generate_mazes(cfg.maze.side, cfg.maze.heldout_tasks, stream_int(cfg.resolved_data_seed, "heldout"))


def _fresh_mazes(side: int, count: int, rng: np.random.Generator, exclude: set[str]) -> list[Maze]:
    out: list[Maze] = []
    misses = 0
    while len(out) < count:
        m = generate_maze(side, int(rng.integers(0, 2**32)))
        if m.cell_string() not in exclude:
            out.append(m)
        else:
            misses += 1
            if misses > 1000 + 100 * count:
                raise ValueError(f"side-{side} mazes are too few to draw training tasks outside the heldout set")
    return out


def _prompts(mazes: list[Maze]) -> np.ndarray:
    return np.array([tokenize_maze(m) for m in mazes], dtype=np.int64)


def _micro_batches(lengths: np.ndarray, n_per_task: int) -> list[tuple[int, int]]:
    """Split tasks into contiguous groups whose padded size fits ``MICRO_BUDGET``."""
    per_task = lengths.reshape(-1, n_per_task).max(axis=1)
    groups, start = [], 0
    while start < len(per_task):
        end = start + 1
        while end < len(per_task) and (end + 1 - start) * n_per_task * per_task[start : end + 1].max() <= MICRO_BUDGET:
            end += 1
        groups.append((start, end))
        start = end
    return groups


@dataclass
class StepResult:
    record: dict
    rollouts: Rollouts
    rewards: np.ndarray


class MazeTrainer:
    def __init__(self, config: TrainConfig, params: ParameterVector | None = None):
        if config.task != "maze":
            raise ValueError("MazeTrainer needs task=maze")
        self.config = config
        self.policy_config = policy_config_for(config)
        self.params = params if params is not None else init_policy(self.policy_config, stream_int(config.seed, "init"))
        self.heldout = heldout_mazes(config)
        self._exclude = {m.cell_string() for m in self.heldout}
        self.dataset: list[Maze] | None = None
        if config.regime == "fixed_dataset":
            rng = stream(config.resolved_data_seed, "dataset")
            self.dataset = _fresh_mazes(config.maze.side, config.dataset_size, rng, self._exclude)
        self.optimizer: AdamW | SGD = make_optimizer(self.params, config.optimizer)
        self.variant = EstimatorVariant(config.objective, config.cv_mode)

    @property
    def step(self) -> int:
        return self.params.step

    @property
    def architecture(self) -> dict:
        return {"kind": "transformer", **self.policy_config.to_dict()}

    def tasks_for_step(self, step: int) -> list[Maze]:
        cfg = self.config
        if self.dataset is None:
            return _fresh_mazes(cfg.maze.side, cfg.tasks_per_batch, stream(cfg.resolved_data_seed, "train", step),
                                self._exclude)
        n = len(self.dataset)
        b = min(cfg.tasks_per_batch, n)
        per_epoch = -(-n // b)
        epoch, offset = divmod(step, per_epoch)
        perm = stream(cfg.seed, "dataset-order", epoch).permutation(n)
        return [self.dataset[i] for i in perm[offset * b : offset * b + b]]

    def _rewards(self, mazes: list[Maze], ro: Rollouts, n: int) -> np.ndarray:
        r = np.array([verify_path(mazes[i // n], ro.actions(i)) for i in range(ro.n_rows)], dtype=np.float64)
        return r.reshape(len(mazes), n)

    def train_step(self) -> StepResult:
        cfg = self.config
        step = self.params.step
        n = cfg.rollouts_per_task
        mazes = self.tasks_for_step(step)
        prompts = _prompts(mazes)
        ro = sample(self.params, self.policy_config, prompts, n, cfg.maze.max_new,
                    stream(cfg.seed, "rollouts", step), cfg.temperature)
        rewards = self._rewards(mazes, ro, n)
        adv = gradient_coefficients(rewards, self.variant, cfg.adv_eps) * n
        total_tokens = float(ro.mask.sum())
        self.params.zero_grad()
        loss_total, drift, used = 0.0, 0.0, False
        for lo, hi in _micro_batches(ro.lengths, n):
            a = adv[lo:hi].reshape(-1)
            if not np.any(a != 0.0) and cfg.entropy_coeff == 0.0:
                continue
            rows = slice(lo * n, hi * n)
            width = int(ro.lengths[rows].max())
            resp, mask = ro.tokens[rows, :width], ro.mask[rows, :width]
            logits = response_logits(self.params, self.policy_config, prompts[lo:hi], resp, n)
            if cfg.temperature != 1.0:
                logits = logits * (1.0 / cfg.temperature)
            taken, ent = sequence_log_probs(logits, resp, mask)
            drift = max(drift, float(np.max(np.abs(taken.data - ro.log_probs[rows, :width] * mask))))
            loss = -(taken.sum(axis=1) * a).sum() * (1.0 / total_tokens)
            if cfg.entropy_coeff:
                loss = loss - ent.sum() * (cfg.entropy_coeff / total_tokens)
            if not np.isfinite(loss.data):
                self.params.zero_grad()
                raise NumericFailure(f"non-finite loss at step {step}")
            loss.backward()
            loss_total += float(loss.data)
            used = True
        norm = 0.0
        if used:
            norm = clip_grad_norm(self.params, cfg.optimizer.grad_clip)
            try:
                self.optimizer.step()
            except NonFiniteGradient as exc:
                raise NumericFailure(f"step {step}: {exc}") from exc
        else:
            self.params.step += 1
        k = rewards.sum(axis=1)
        record = {
            "step": self.params.step,
            "loss": loss_total,
            "train_reward": float(rewards.mean()),
            "frac_solved": float(np.mean(k >= 1)),
            "mean_length": float(ro.lengths.mean()),
            "entropy": float((ro.entropy * ro.mask).sum() / total_tokens),
            "grad_norm": norm,
            "updated": used,
            "logprob_drift": drift if used else None,
        }
        return StepResult(record, ro, rewards)

    def evaluate(self, mazes: list[Maze] | None = None, n: int | None = None, ks=None, key: int = 0,
                 params: ParameterVector | None = None, stream_name: str = "eval") -> dict:
        """Sampled pass@k on ``mazes`` (the heldout set by default)."""
        cfg = self.config
        mazes = self.heldout if mazes is None else mazes
        if not mazes:
            raise ValueError("empty evaluation set")
        n = cfg.eval_rollouts if n is None else n
        ks = [k for k in (cfg.pass_k if ks is None else ks)]
        if max(ks) > n:
            raise ValueError(f"eval rollouts n={n} < max k={max(ks)}")
        params = self.params if params is None else params
        per_chunk = max(1, EVAL_ROWS // n)
        counts, lengths, ent_sum, tok_sum = [], [], 0.0, 0.0
        for ci, lo in enumerate(range(0, len(mazes), per_chunk)):
            chunk = mazes[lo : lo + per_chunk]
            ro = sample(params, self.policy_config, _prompts(chunk), n, cfg.maze.max_new,
                        stream(cfg.seed, stream_name, key, ci), cfg.temperature)
            counts.extend(self._rewards(chunk, ro, n).sum(axis=1).astype(int).tolist())
            lengths.append(ro.lengths)
            ent_sum += float((ro.entropy * ro.mask).sum())
            tok_sum += float(ro.mask.sum())
        counts_arr = np.array(counts)
        return {
            "pass_at_k": {str(k): float(np.mean([pass_at_k_estimate(n, c, k) for c in counts])) for k in ks},
            "frac_solved": float(np.mean(counts_arr >= 1)),
            "mean_length": float(np.concatenate(lengths).mean()),
            "entropy": ent_sum / tok_sum,
            "n": n,
        }


def sft_batch(mazes: list[Maze]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Prompts plus PAD-padded shortest-path responses and their mask."""
    paths = [shortest_path(m) for m in mazes]
    width = max(len(p) for p in paths)
    resp = np.full((len(paths), width), int(Tok.PAD), dtype=np.int64)
    mask = np.zeros((len(paths), width))
    for i, p in enumerate(paths):
        resp[i, : len(p)] = p
        mask[i, : len(p)] = 1.0
    return _prompts(mazes), resp, mask


def sft_pretrain(trainer: MazeTrainer, sft: SFTConfig, log: Callable[[dict], None] | None = None) -> list[dict]:
    """Teacher-forced next-token training on shortest paths.

    Uses fresh mazes every step (heldout mazes excluded) and a dedicated AdamW.
    Raises :class:`SFTFloorError` if heldout pass@1 ends below ``sft.floor``.
    The parameter step counter is reset to zero afterwards so RL starts at 0.
    """
    cfg = trainer.config
    params = trainer.params
    opt = AdamW(params, lr=sft.lr)
    history: list[dict] = []
    pass1 = 0.0
    for s in range(sft.steps):
        mazes = _fresh_mazes(cfg.maze.side, sft.batch_size, stream(cfg.resolved_data_seed, "sft", s), trainer._exclude)
        prompts, resp, mask = sft_batch(mazes)
        params.zero_grad()
        logits = response_logits(params, trainer.policy_config, prompts, resp, 1)
        taken, _ = sequence_log_probs(logits, resp, mask)
        loss = -taken.sum() * (1.0 / mask.sum())
        if not np.isfinite(loss.data):
            raise NumericFailure(f"non-finite SFT loss at step {s}")
        loss.backward()
        norm = clip_grad_norm(params, cfg.optimizer.grad_clip)
        opt.step()
        rec = {"phase": "sft", "step": s + 1, "loss": float(loss.data), "grad_norm": norm}
        last = s + 1 == sft.steps
        if (s + 1) % sft.eval_every == 0 or last:
            ev = trainer.evaluate(n=sft.eval_rollouts, ks=[1], key=s + 1, stream_name="sft-eval")
            pass1 = ev["pass_at_k"]["1"]
            rec["eval"] = ev
        history.append(rec)
        if log:
            log(rec)
        if "eval" in rec and sft.stop_at_floor and pass1 >= sft.floor:
            break
    params.step = 0
    if pass1 < sft.floor:
        raise SFTFloorError(f"SFT ended with heldout pass@1={pass1:.4f} < floor {sft.floor}", history)
    return history
