"""Run configuration: a validated YAML tree.

Every key is documented in README.md. Unknown keys are rejected so a typo
fails loudly instead of silently training with defaults.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from maxrl.estimators import CVMode
from maxrl.objectives import Objective


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class OptimizerConfig(_Strict):
    name: Literal["adamw", "sgd"] = "adamw"
    lr: float = Field(1e-4, gt=0)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    momentum: float = 0.9
    grad_clip: float = 1.0


class ModelConfig(_Strict):
    d_model: int = 64
    n_heads: int = 2
    n_layers: int = 2
    d_ff: int = 256


class MazeConfig(_Strict):
    side: int = 9
    heldout_tasks: int = 64
    max_new_factor: int = 4

    @field_validator("side")
    @classmethod
    def _odd(cls, v):
        if v < 5 or v % 2 == 0:
            raise ValueError("maze side must be odd and >= 5")
        return v

    @property
    def max_new(self) -> int:
        return self.max_new_factor * self.side * self.side


class SFTConfig(_Strict):
    steps: int = 1500
    batch_size: int = 32
    lr: float = 5e-4
    floor: float = 0.02
    eval_every: int = 100
    eval_rollouts: int = 16
    stop_at_floor: bool = True


class ClassifierConfig(_Strict):
    num_classes: int = 1000
    num_tasks: int = 8000
    heldout_tasks: int = 2000
    dim: int = 32
    hidden: int = 128
    noise: float = 0.5
    profile: Literal["uniform-hard", "random-init"] = "uniform-hard"
    scatter_tasks: int = 200


class TrainConfig(_Strict):
    task: Literal["maze", "classifier"] = "maze"
    objective: Objective = Objective.MAXRL
    cv_mode: CVMode = CVMode.DROP_ALL_ON_FAILURE
    adv_eps: float = Field(1e-6, ge=0)
    rollouts_per_task: int = Field(8, ge=1)
    tasks_per_batch: int = Field(32, ge=1)
    steps: int = Field(2000, ge=0)
    entropy_coeff: float = 0.0
    regime: Literal["infinite_data", "fixed_dataset"] = "infinite_data"
    dataset_size: int = 64
    num_epochs: Optional[int] = None
    seed: int = 0
    data_seed: Optional[int] = None
    eval_every: int = 100
    eval_rollouts: int = 64
    pass_k: list[int] = Field(default_factory=lambda: [1, 8, 64])
    temperature: float = 1.0
    checkpoint_every: int = 200
    keep_checkpoints: int = 3
    init_checkpoint: Optional[str] = None
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    maze: MazeConfig = Field(default_factory=MazeConfig)
    sft: Optional[SFTConfig] = None
    classifier: ClassifierConfig = Field(default_factory=ClassifierConfig)

    @field_validator("objective", mode="before")
    @classmethod
    def _objective(cls, v):
        return Objective.parse(v)

    @field_validator("pass_k")
    @classmethod
    def _ks(cls, v):
        if not v or min(v) < 1:
            raise ValueError("pass_k must list positive integers")
        return sorted(set(v))

    @model_validator(mode="after")
    def _consistent(self):
        if self.eval_rollouts < max(self.pass_k) and self.task == "maze":
            raise ValueError("eval_rollouts must be >= max(pass_k)")
        if self.objective is Objective.RLOO and self.rollouts_per_task < 2:
            raise ValueError("RLOO needs rollouts_per_task >= 2")
        if self.objective is Objective.EXACT_ML and self.task != "classifier":
            raise ValueError("exact ML training is only available for the classifier")
        if self.regime == "fixed_dataset" and self.num_epochs is not None:
            per_epoch = -(-self.dataset_size // self.tasks_per_batch)
            self.steps = per_epoch * self.num_epochs
        return self

    @property
    def resolved_data_seed(self) -> int:
        return self.seed if self.data_seed is None else self.data_seed

    def to_dict(self) -> dict[str, Any]:
        return self.model_dump(mode="json")


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> TrainConfig:
    """Read a YAML file (optional), apply dotted-key overrides, validate."""
    data: dict[str, Any] = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        data = loaded or {}
    for key, value in (overrides or {}).items():
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    try:
        return TrainConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def dump_config(config: TrainConfig, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(config.to_dict(), sort_keys=True))
    return path
