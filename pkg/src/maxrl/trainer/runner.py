"""Run directories: manifest, metrics stream, checkpoints, resume.

Layout of ``<output root>/<run id>/``::

    manifest.json      written atomically before the first step, never modified
    config.yaml        the resolved configuration
    run.lock           present while a process owns the run
    metrics.jsonl      one record per step (plus a step-0 evaluation record)
    metrics.csv        flat projection of metrics.jsonl
    timing.jsonl       wall-clock per record (kept apart so metrics are reproducible)
    sft_metrics.jsonl  supervised warm-up records (maze runs with an ``sft`` block)
    grad_scatter.jsonl per-task pass rate / gradient norm (classifier runs)
    checkpoints/       step-XXXXXXX.ckpt, last ``keep_checkpoints`` retained; sft.ckpt
    completed.json     end timestamp and final step, written on success
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from maxrl import __version__
from maxrl.checkpoint import load_parameters, read_checkpoint, write_checkpoint
from maxrl.config import ConfigError, TrainConfig, dump_config
from maxrl.metrics import MetricsWriter, metrics_csv
from maxrl.trainer.classifier import ClassifierTrainer
from maxrl.trainer.maze import MazeTrainer, sft_pretrain

OUTPUT_ROOT_ENV = "MAXRL_OUTPUT_ROOT"
CKPT_PREFIX = "step-"


class RunError(RuntimeError):
    pass


# modules whose source determines the metric stream of a run
TRAJECTORY_MODULES = ("autodiff.py", "checkpoint.py", "config.py", "estimators.py", "metrics.py", "objectives.py",
                      "optim.py", "policy.py", "tasks/classification.py", "tasks/maze.py", "trainer/classifier.py",
                      "trainer/common.py", "trainer/maze.py", "trainer/runner.py")


def code_digest() -> str:
    """SHA-256 over the sources that shape training outputs."""
    root = Path(__file__).resolve().parent.parent
    h = hashlib.sha256()
    for rel in TRAJECTORY_MODULES:
        h.update(rel.encode())
        h.update((root / rel).read_bytes())
    return h.hexdigest()[:16]


def output_root(root: str | os.PathLike | None = None) -> Path:
    return Path(root or os.environ.get(OUTPUT_ROOT_ENV) or "runs")


def config_hash(config: TrainConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:10]


def default_run_id(config: TrainConfig) -> str:
    return f"{config.task}-{config.objective.value}-s{config.seed}-{config_hash(config)}"


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _atomic_json(path: Path, payload: dict) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


class RunLock:
    """Exclusive ownership of a run directory via an ``O_EXCL`` lock file."""

    def __init__(self, run_dir: Path):
        self.path = run_dir / "run.lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RunError(f"{self.path} exists: another process owns this run (remove the file if it is stale)")
        with os.fdopen(fd, "w") as fh:
            fh.write(f"{os.getpid()}\n")
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


def checkpoint_path(run_dir: Path, step: int) -> Path:
    return run_dir / "checkpoints" / f"{CKPT_PREFIX}{step:07d}.ckpt"


def list_checkpoints(run_dir: Path) -> list[Path]:
    return sorted((run_dir / "checkpoints").glob(f"{CKPT_PREFIX}*.ckpt"))


def save_training_checkpoint(path: Path, trainer, run_id: str) -> Path:
    arrays = dict(trainer.params.arrays())
    arrays.update({f"opt.{k}": v for k, v in trainer.optimizer.state_arrays().items()})
    return write_checkpoint(path, arrays, step=trainer.params.step, seed=trainer.config.seed,
                            architecture=trainer.architecture,
                            extra={"run_id": run_id, "optimizer": trainer.optimizer.state_meta()})


def restore_training_checkpoint(path: Path, trainer) -> int:
    header, arrays = read_checkpoint(path)
    trainer.params.load_arrays(arrays)
    trainer.params.step = header["step"]
    opt = {k[4:]: v for k, v in arrays.items() if k.startswith("opt.")}
    trainer.optimizer.load_state(header["extra"]["optimizer"], opt)
    return header["step"]


def _prune(run_dir: Path, keep: int) -> None:
    ckpts = list_checkpoints(run_dir)
    for old in ckpts[: max(len(ckpts) - keep, 0)]:
        old.unlink()


@dataclass
class RunResult:
    run_id: str
    run_dir: Path
    final_step: int
    final_eval: dict | None

    @property
    def metrics_path(self) -> Path:
        return self.run_dir / "metrics.jsonl"


def build_trainer(config: TrainConfig, run_dir: Path | None = None, log: Callable[[str], None] = print):
    """Trainer for ``config``; for mazes, load ``init_checkpoint`` or run SFT first."""
    if config.task == "classifier":
        return ClassifierTrainer(config)
    if config.init_checkpoint:
        params, _ = load_parameters(config.init_checkpoint)
        params.step = 0
        return MazeTrainer(config, params)
    trainer = MazeTrainer(config)
    if config.sft is not None and config.sft.steps > 0:
        sink = MetricsWriter(run_dir / "sft_metrics.jsonl") if run_dir else None
        if sink:
            sink.path.write_text("")

        def _log(rec):
            if sink:
                sink.write(rec)
            if "eval" in rec:
                log(f"sft step {rec['step']}: loss {rec['loss']:.4f} pass@1 {rec['eval']['pass_at_k']['1']:.4f}")

        sft_pretrain(trainer, config.sft, _log)
        if run_dir:
            save_training_checkpoint(run_dir / "checkpoints" / "sft.ckpt", trainer, run_dir.name)
    return trainer


def _evaluate(trainer, config: TrainConfig, step: int) -> dict:
    if config.task == "classifier":
        return trainer.evaluate(config.pass_k)
    return trainer.evaluate(key=step)


def _scatter(trainer, config: TrainConfig, path: Path, step: int) -> None:
    rows = trainer.gradient_scatter(config.classifier.scatter_tasks)
    with open(path, "a") as fh:
        for row in rows:
            fh.write(json.dumps({"step": step, "objective": config.objective.value, **row}, sort_keys=True) + "\n")


def run_experiment(config: TrainConfig, root: str | os.PathLike | None = None, run_id: str | None = None,
                   resume: bool = False, log: Callable[[str], None] = print) -> RunResult:
    run_id = run_id or default_run_id(config)
    run_dir = output_root(root) / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "checkpoints").mkdir(exist_ok=True)
    with RunLock(run_dir):
        manifest_path = run_dir / "manifest.json"
        if manifest_path.exists():
            if not resume:
                raise RunError(f"{run_dir} already holds a run; pass --resume or choose another run id")
            stored = json.loads(manifest_path.read_text())["config"]
            if stored != config.to_dict():
                raise ConfigError(f"config differs from the one recorded in {manifest_path}")
        else:
            resume = False
            _atomic_json(manifest_path, {
                "run_id": run_id,
                "code_version": __version__,
                "code_digest": code_digest(),
                "config": config.to_dict(),
                "config_hash": config_hash(config),
                "seeds": {"seed": config.seed, "data_seed": config.resolved_data_seed},
                "started_at": _now(),
                "outputs": {
                    "metrics": "metrics.jsonl",
                    "metrics_csv": "metrics.csv",
                    "timing": "timing.jsonl",
                    "checkpoints": "checkpoints/",
                    "completion": "completed.json",
                },
            })
            dump_config(config, run_dir / "config.yaml")
        return _train(config, run_dir, run_id, resume, log)


def _train(config: TrainConfig, run_dir: Path, run_id: str, resume: bool, log) -> RunResult:
    writer = MetricsWriter(run_dir / "metrics.jsonl", run_dir / "timing.jsonl")
    scatter_path = run_dir / "grad_scatter.jsonl"
    ckpts = list_checkpoints(run_dir) if resume else []
    if ckpts:
        # the warm-up is already baked into the checkpoint; do not rerun it
        trainer = (ClassifierTrainer(config) if config.task == "classifier"
                   else MazeTrainer(config))
        start = restore_training_checkpoint(ckpts[-1], trainer)
        writer.truncate_after(start)
        if config.task == "classifier" and scatter_path.exists():
            keep = [ln for ln in scatter_path.read_text().splitlines() if json.loads(ln)["step"] <= start]
            scatter_path.write_text("".join(ln + "\n" for ln in keep))
        log(f"resuming {run_id} from step {start}")
    else:
        for name in ("metrics.jsonl", "timing.jsonl", "grad_scatter.jsonl", "completed.json"):
            (run_dir / name).unlink(missing_ok=True)
        for old in list_checkpoints(run_dir):
            old.unlink()
        trainer = build_trainer(config, run_dir, log)
        start = 0
    t0 = time.perf_counter()
    per_step = config.tasks_per_batch * config.rollouts_per_task
    last_eval = None
    if start == 0:
        last_eval = _evaluate(trainer, config, 0)
        writer.write({"step": 0, "rollouts": 0, "eval": last_eval}, time.perf_counter() - t0)
        if config.task == "classifier":
            scatter_path.unlink(missing_ok=True)
            _scatter(trainer, config, scatter_path, 0)
    for step in range(start + 1, config.steps + 1):
        result = trainer.train_step()
        record = result.record if config.task == "maze" else {"step": trainer.params.step, **vars(result)}
        record["rollouts"] = step * per_step
        if step % config.eval_every == 0 or step == config.steps:
            last_eval = record["eval"] = _evaluate(trainer, config, step)
            log(f"{run_id} step {step}: " + json.dumps(last_eval, sort_keys=True))
        writer.write(record, time.perf_counter() - t0)
        if step % config.checkpoint_every == 0 or step == config.steps:
            save_training_checkpoint(checkpoint_path(run_dir, step), trainer, run_id)
            _prune(run_dir, config.keep_checkpoints)
    if config.task == "classifier" and config.steps > start:
        _scatter(trainer, config, scatter_path, config.steps)
    metrics_csv(writer.path, run_dir / "metrics.csv")
    _atomic_json(run_dir / "completed.json", {"finished_at": _now(), "final_step": trainer.params.step})
    return RunResult(run_id, run_dir, trainer.params.step, last_eval)


def evaluate_checkpoint(checkpoint: str | os.PathLike, config: TrainConfig, n: int | None = None,
                        ks=None) -> dict:
    """Heldout evaluation of a stored checkpoint under ``config``'s task setup."""
    params, header = load_parameters(checkpoint)
    if config.task == "classifier":
        trainer = ClassifierTrainer(config, params=params)
        return trainer.evaluate(ks or config.pass_k)
    trainer = MazeTrainer(config, params)
    return trainer.evaluate(n=n, ks=ks, key=header["step"])
