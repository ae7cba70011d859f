"""
Training loop for the two-branch anticipation model.
Analytic gradients from the losses and the model are applied with torch's Adam.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from tqdm import tqdm

from anticipation.ai.losses import LossBreakdown, total_loss
from anticipation.ai.model import ModelParams, backward, count_params, forward, init_params
from anticipation.config import SHOW_PROGRESS, TrainConfig
from anticipation.dataset import DatasetManifest, batches
from anticipation.errors import ConfigError, DataError
from anticipation.evaluate import EvalReport, evaluate
from anticipation.hierarchy import CooccurrenceModel

logger = logging.getLogger(__name__)

EVAL_SPLIT = "val"


@dataclass
class TrainHistory:
    """Per-epoch loss means, periodic evaluations and epoch timings."""

    epochs: List[Dict[str, float]] = field(default_factory=list)
    evals: List[Tuple[int, EvalReport]] = field(default_factory=list)
    wall_clock: List[float] = field(default_factory=list)
    checkpoint: Optional[str] = None

    @property
    def final_eval(self) -> Optional[EvalReport]:
        return self.evals[-1][1] if self.evals else None

    def rows(self) -> List[Dict[str, float]]:
        """History rows: losses of every epoch joined with the recalls evaluated at it."""
        by_epoch = {epoch: report.flat() for epoch, report in self.evals}
        rows = []
        for row in self.epochs:
            merged = dict(row)
            merged.update(by_epoch.get(int(row["epoch"]), {}))
            rows.append(merged)
        return rows


def check_hierarchy(manifest: DatasetManifest, cooccurrence: Sequence[CooccurrenceModel]):
    """Co-occurrence models must match the label space and count exactly the training split."""
    space = manifest.label_space
    if len(cooccurrence) != space.num_levels:
        raise DataError(f"{len(cooccurrence)} co-occurrence model(s) for {space.num_levels} goal level(s)")
    for k, model in enumerate(cooccurrence):
        if model.counts.shape != (space.num_goals(k), space.num_fine_actions):
            raise DataError(f"co-occurrence level {k} has shape {model.counts.shape}, expected "
                            f"{(space.num_goals(k), space.num_fine_actions)}")
        if model.total != manifest.num_training_records:
            raise DataError(f"co-occurrence level {k} counts {model.total} records but the training "
                            f"split has {manifest.num_training_records}; statistics must come from "
                            f"the training split only")


class Trainer:
    """Owns the mutable parameters and the optimizer state of one training run."""

    def __init__(self, config: TrainConfig, manifest: DatasetManifest,
                 cooccurrence: Sequence[CooccurrenceModel] = ()):
        self.config = config
        self.manifest = manifest
        self.cooccurrence = list(cooccurrence or [])
        if config.loss.use_consistency and not self.cooccurrence:
            raise ConfigError("loss.use_consistency: no co-occurrence model was provided")
        if self.cooccurrence:
            check_hierarchy(manifest, self.cooccurrence)
        if manifest.num_training_records == 0:
            raise DataError("the training split is empty")

        self.params = init_params(manifest.label_space, manifest.feature_dim,
                                  config.hidden_width, config.seed)
        # The optimizer updates these tensors in place; they share memory with self.params
        self.tensors = [torch.from_numpy(t).requires_grad_(True)
                        for _, t in self.params.named_tensors()]
        self.optimizer = torch.optim.Adam(
            self.tensors, lr=config.learning_rate,
            betas=(config.adam_beta1, config.adam_beta2), eps=config.adam_epsilon)
        self.history = TrainHistory()

    def _train_step(self, features, labels) -> LossBreakdown:
        """Forward, loss, analytic backward and one Adam update on a batch."""
        output = forward(self.params, features)
        breakdown = total_loss(output, labels, self.cooccurrence, self.config.loss)
        grads = backward(self.params, features, output, breakdown.grad_fine_logits,
                         breakdown.grad_goal_logits)
        for tensor, (_, grad) in zip(self.tensors, grads.named_tensors()):
            tensor.grad = torch.from_numpy(np.ascontiguousarray(grad))
        self.optimizer.step()
        return breakdown

    def train_epoch(self, epoch: int) -> Dict[str, float]:
        """
        Train for one epoch.

        Returns:
            Example-weighted means of every loss term, plus their sums over the epoch
        """
        sums: Dict[str, float] = {}
        seen = 0
        for features, labels in batches(self.manifest, "train", self.config.batch_size,
                                        self.config.seed, epoch):
            breakdown = self._train_step(features, labels)
            for key, value in breakdown.as_dict().items():
                weight = 1.0 if key.endswith("_sum") else breakdown.batch_size
                sums[key] = sums.get(key, 0.0) + value * weight
            seen += breakdown.batch_size
        row = {"epoch": epoch + 1}
        row.update({key: value if key.endswith("_sum") else value / seen
                    for key, value in sums.items()})
        return row

    def _evaluate(self, epoch: int):
        if self.manifest.splits.get(EVAL_SPLIT):
            report = evaluate(self.params, self.manifest, EVAL_SPLIT)
            self.history.evals.append((epoch, report))

    def train(self) -> Tuple[ModelParams, TrainHistory]:
        """Run all epochs, evaluating every `eval_every` epochs and after the last one."""
        config = self.config
        logger.info("Starting training: %d epochs, batch size %d, loss %s", config.epochs,
                    config.batch_size, config.loss.to_dict())
        logger.info("Parameters: %s", count_params(self.params))

        progress = tqdm(range(config.epochs), desc="train", disable=not SHOW_PROGRESS)
        for epoch in progress:
            start = time.perf_counter()
            row = self.train_epoch(epoch)
            self.history.epochs.append(row)
            self.history.wall_clock.append(time.perf_counter() - start)
            progress.set_postfix(loss=f"{row['total']:.4f}")

            if (epoch + 1) % config.eval_every == 0 and epoch + 1 < config.epochs:
                self._evaluate(epoch + 1)
            logger.debug("Epoch %d/%d | loss %.4f | %.2fs", epoch + 1, config.epochs,
                         row["total"], self.history.wall_clock[-1])

        self._evaluate(config.epochs)
        final = self.history.final_eval
        if final is not None:
            logger.info("Training complete: action recall %.2f", final.recall())
        return self.params, self.history


def train(config: TrainConfig, manifest: DatasetManifest,
          cooccurrence: Sequence[CooccurrenceModel] = ()) -> Tuple[ModelParams, TrainHistory]:
    """Train a model; deterministic given the config seed."""
    return Trainer(config, manifest, cooccurrence).train()
