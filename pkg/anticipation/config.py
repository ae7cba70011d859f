"""
Configuration constants and config objects for goal-consistent action anticipation.
"""

import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from anticipation.errors import ConfigError

load_dotenv()

# Environment settings
LOG_LEVEL = os.getenv("ANTICIPATION_LOG_LEVEL", "INFO")
DEFAULT_WORKERS = int(os.getenv("ANTICIPATION_WORKERS", "1"))
SHOW_PROGRESS = os.getenv("ANTICIPATION_PROGRESS", "1") not in ("0", "false", "False")

# Task definition
ANTICIPATION_GAP = 1.0  # Seconds between end of observation and action onset
TOP_K = 5  # Class-mean Top-5 recall

# Label hierarchy
SMOOTHING_EPSILON = 1e-6  # Spread over goals when an action column has no counts

# Model
HIDDEN_WIDTH = 64

# Training parameters
BATCH_SIZE = 64
LEARNING_RATE = 0.001
ADAM_BETAS = (0.9, 0.999)
ADAM_EPSILON = 1e-8
DEFAULT_EPOCHS = 30
LAMBDA_CONS = 1.0
LOG_CLAMP_EPSILON = 1e-12

# Experiments
LAMBDA_SWEEP = [0.0, 0.1, 0.5, 1.0, 2.5, 5.0]
ABLATION_SEEDS = [0, 1, 2, 3, 4]

# Synthetic data limits
MAX_SYNTHETIC_ACTIONS = 4096

CONSISTENCY_VARIANTS = ("ground-truth-ce", "predicted-kl")
ABLATION_KINDS = ("components", "formulation")


def _from_dict(cls, data: Dict[str, Any], section: str):
    """Build a dataclass from a plain dict, naming any unknown key."""
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{section}.{unknown[0]}: unknown field")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"{section}: {e}") from e


def _require(condition: bool, name: str, message: str):
    if not condition:
        raise ConfigError(f"{name}: {message}")


@dataclass
class SyntheticConfig:
    """Parameters of the procedural-activity generator."""

    num_goals: int = 6
    actions_per_goal: int = 8
    action_overlap_fraction: float = 0.25
    feature_dim: int = 32
    snippets: int = 8
    noise_sigma: float = 0.8
    signal_mix: float = 0.5
    num_sequences: int = 600
    views_per_sequence: int = 2
    seed: int = 0
    sequence_length: int = 4
    num_verbs: int = 6
    num_tasks: int = 0
    val_fraction: float = 0.5
    unseen_goal_fraction: float = 0.17
    transition_concentration: float = 2.0

    def __post_init__(self):
        for name in ("num_goals", "actions_per_goal", "feature_dim", "snippets",
                     "num_sequences", "views_per_sequence", "num_verbs"):
            value = getattr(self, name)
            _require(isinstance(value, int) and value > 0, name, "must be a positive integer")
        _require(isinstance(self.sequence_length, int) and self.sequence_length >= 2,
                 "sequence_length", "must be an integer >= 2")
        _require(isinstance(self.num_tasks, int) and self.num_tasks >= 0,
                 "num_tasks", "must be a non-negative integer")
        _require(self.num_tasks <= self.num_goals, "num_tasks", "cannot exceed num_goals")
        _require(self.noise_sigma >= 0, "noise_sigma", "must be >= 0")
        _require(0.0 <= self.signal_mix <= 1.0, "signal_mix", "must be in [0, 1]")
        _require(0.0 <= self.action_overlap_fraction < 1.0, "action_overlap_fraction",
                 "must be in [0, 1)")
        _require(0.0 < self.val_fraction < 1.0, "val_fraction", "must be in (0, 1)")
        _require(0.0 <= self.unseen_goal_fraction < 1.0, "unseen_goal_fraction",
                 "must be in [0, 1)")
        _require(self.transition_concentration > 0, "transition_concentration", "must be > 0")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SyntheticConfig":
        return _from_dict(cls, data, "synthetic")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class LossConfig:
    """
    Which terms of the final loss are active and how they are weighted.

    The goal cross-entropy weight is fixed at 1. `lambda_cons` is shared by
    every goal level unless `lambda_cons_per_level` overrides it.
    """

    lambda_cons: float = LAMBDA_CONS
    lambda_cons_per_level: Optional[List[float]] = None
    use_goal_loss: bool = True
    use_consistency: bool = True
    consistency_variant: str = "ground-truth-ce"
    log_clamp_epsilon: float = LOG_CLAMP_EPSILON

    def __post_init__(self):
        _require(self.lambda_cons >= 0, "loss.lambda_cons", "must be >= 0")
        if self.lambda_cons_per_level is not None:
            _require(all(v >= 0 for v in self.lambda_cons_per_level),
                     "loss.lambda_cons_per_level", "every entry must be >= 0")
        _require(self.consistency_variant in CONSISTENCY_VARIANTS, "loss.consistency_variant",
                 f"must be one of {', '.join(CONSISTENCY_VARIANTS)}")
        _require(0.0 < self.log_clamp_epsilon <= 1e-3, "loss.log_clamp_epsilon",
                 "must be in (0, 1e-3]")

    def lambda_for(self, level: int) -> float:
        if self.lambda_cons_per_level is None:
            return self.lambda_cons
        if level >= len(self.lambda_cons_per_level):
            raise ConfigError(f"loss.lambda_cons_per_level: no weight for goal level {level}")
        return self.lambda_cons_per_level[level]

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LossConfig":
        return _from_dict(cls, data, "loss")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TrainConfig:
    """Optimization settings for one training run."""

    batch_size: int = BATCH_SIZE
    epochs: int = DEFAULT_EPOCHS
    learning_rate: float = LEARNING_RATE
    adam_beta1: float = ADAM_BETAS[0]
    adam_beta2: float = ADAM_BETAS[1]
    adam_epsilon: float = ADAM_EPSILON
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    hidden_width: int = HIDDEN_WIDTH
    eval_every: int = 5

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig.from_dict(self.loss)
        _require(isinstance(self.batch_size, int) and self.batch_size >= 1, "batch_size",
                 "must be an integer >= 1")
        _require(isinstance(self.epochs, int) and self.epochs >= 0, "epochs",
                 "must be an integer >= 0")
        _require(self.learning_rate > 0, "learning_rate", "must be > 0")
        _require(0.0 < self.adam_beta1 < 1.0, "adam_beta1", "must be in (0, 1)")
        _require(0.0 < self.adam_beta2 < 1.0, "adam_beta2", "must be in (0, 1)")
        _require(self.adam_epsilon > 0, "adam_epsilon", "must be > 0")
        _require(isinstance(self.hidden_width, int) and self.hidden_width > 0, "hidden_width",
                 "must be a positive integer")
        _require(isinstance(self.eval_every, int) and self.eval_every >= 1, "eval_every",
                 "must be an integer >= 1")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        return _from_dict(cls, data, "train")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class ExperimentConfig:
    """Config of the ablation and sweep drivers."""

    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: List[int] = field(default_factory=lambda: list(ABLATION_SEEDS))
    lambda_values: List[float] = field(default_factory=lambda: list(LAMBDA_SWEEP))
    ablation: str = "components"
    workers: int = DEFAULT_WORKERS

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig.from_dict(self.train)
        _require(len(self.seeds) > 0, "seeds", "must not be empty")
        _require(len(self.lambda_values) > 0, "lambda_values", "must not be empty")
        _require(all(v >= 0 for v in self.lambda_values), "lambda_values",
                 "every entry must be >= 0")
        _require(self.ablation in ABLATION_KINDS, "ablation",
                 f"must be one of {', '.join(ABLATION_KINDS)}")
        _require(isinstance(self.workers, int) and self.workers >= 1, "workers",
                 "must be an integer >= 1")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        return _from_dict(cls, data, "experiment")
