"""
Experiment drivers: loss-component ablation, consistency-formulation ablation
and the consistency-weight sweep.

Every run is a full training that differs from the base config only in its
loss settings and seed. Runs are independent, so they may be spread over
worker processes; results are merged in submission order.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Sequence, Tuple

import pandas as pd
from tqdm import tqdm

from anticipation.ai.train import train
from anticipation.config import SHOW_PROGRESS, LossConfig, TrainConfig
from anticipation.dataset import DatasetManifest
from anticipation.errors import ConfigError
from anticipation.hierarchy import CooccurrenceModel

logger = logging.getLogger(__name__)

MIN_ABLATION_SEEDS = 3

COMPONENT_VARIANTS = [
    ("fine", dict(use_goal_loss=False, use_consistency=False)),
    ("fine+goal", dict(use_goal_loss=True, use_consistency=False)),
    ("fine+goal+cons", dict(use_goal_loss=True, use_consistency=True)),
]

FORMULATION_VARIANTS = [
    ("ground-truth-ce", dict(use_goal_loss=True, use_consistency=True,
                             consistency_variant="ground-truth-ce")),
    ("predicted-kl", dict(use_goal_loss=True, use_consistency=True,
                          consistency_variant="predicted-kl")),
]


@dataclass
class ExperimentResult:
    """Seed-wise runs and their mean / sd summary per setting."""

    key: str
    runs: pd.DataFrame
    summary: pd.DataFrame

    def mean(self, setting) -> float:
        row = self.summary[self.summary[self.key] == setting]
        return float(row["mean"].iloc[0])

    @property
    def best(self) -> Tuple[object, float]:
        """Setting with the highest mean recall (first one on ties)."""
        idx = self.summary["mean"].idxmax()
        return self.summary.loc[idx, self.key], float(self.summary.loc[idx, "mean"])


def _run_once(job: Tuple[TrainConfig, DatasetManifest, List[CooccurrenceModel]]) -> float:
    config, manifest, cooccurrence = job
    _, history = train(config, manifest, cooccurrence)
    return history.final_eval.recall("action", "per_view", "overall")


def _execute(jobs: list, workers: int, desc: str) -> List[float]:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(tqdm(pool.map(_run_once, jobs), total=len(jobs), desc=desc,
                             disable=not SHOW_PROGRESS))
    return [_run_once(job) for job in tqdm(jobs, desc=desc, disable=not SHOW_PROGRESS)]


def _with_loss(base: TrainConfig, seed: int, **overrides) -> TrainConfig:
    loss = LossConfig(**{**base.loss.to_dict(), **overrides})
    return replace(base, seed=seed, loss=loss)


def _summarize(runs: pd.DataFrame, key: str) -> pd.DataFrame:
    return (runs.groupby(key, sort=False)["recall"]
            .agg(mean="mean", sd="std", runs="count")
            .reset_index())


def _run_variants(base_config: TrainConfig, manifest: DatasetManifest,
                  cooccurrence: Sequence[CooccurrenceModel], seeds: Sequence[int],
                  variants, workers: int, desc: str) -> ExperimentResult:
    if len(seeds) < MIN_ABLATION_SEEDS:
        raise ConfigError(f"seeds: an ablation needs at least {MIN_ABLATION_SEEDS} seeds, "
                          f"got {len(seeds)}")
    settings = [(name, seed) for name, _ in variants for seed in seeds]
    overrides = dict(variants)
    jobs = [(_with_loss(base_config, seed, **overrides[name]), manifest, list(cooccurrence))
            for name, seed in settings]
    recalls = _execute(jobs, workers, desc)
    runs = pd.DataFrame([{"variant": name, "seed": seed, "recall": recall}
                         for (name, seed), recall in zip(settings, recalls)])
    summary = _summarize(runs, "variant")
    for _, row in summary.iterrows():
        logger.info("%-18s %.2f +- %.2f (%d runs)", row["variant"], row["mean"],
                    0.0 if pd.isna(row["sd"]) else row["sd"], row["runs"])
    return ExperimentResult("variant", runs, summary)


def run_component_ablation(base_config: TrainConfig, manifest: DatasetManifest,
                           cooccurrence: Sequence[CooccurrenceModel], seeds: Sequence[int],
                           workers: int = 1) -> ExperimentResult:
    """
    Train fine-only, fine+goal and fine+goal+consistency models for every seed.

    Returns:
        ExperimentResult with 3 x len(seeds) runs of class-mean Top-5 action recall
    """
    return _run_variants(base_config, manifest, cooccurrence, seeds, COMPONENT_VARIANTS,
                         workers, "components")


def run_formulation_ablation(base_config: TrainConfig, manifest: DatasetManifest,
                             cooccurrence: Sequence[CooccurrenceModel], seeds: Sequence[int],
                             workers: int = 1) -> ExperimentResult:
    """Compare the ground-truth cross-entropy consistency loss with the predicted-goal KL one."""
    return _run_variants(base_config, manifest, cooccurrence, seeds, FORMULATION_VARIANTS,
                         workers, "formulation")


def run_lambda_sweep(base_config: TrainConfig, manifest: DatasetManifest,
                     cooccurrence: Sequence[CooccurrenceModel], lambda_values: Sequence[float],
                     seeds: Sequence[int], workers: int = 1) -> ExperimentResult:
    """One full-loss training per (lambda, seed); `best` gives the peak of the curve."""
    if not lambda_values:
        raise ConfigError("lambda_values: must not be empty")
    if not seeds:
        raise ConfigError("seeds: must not be empty")
    settings = [(float(lam), seed) for lam in lambda_values for seed in seeds]
    jobs = [(_with_loss(base_config, seed, use_goal_loss=True, use_consistency=True,
                        lambda_cons=lam, lambda_cons_per_level=None),
             manifest, list(cooccurrence))
            for lam, seed in settings]
    recalls = _execute(jobs, workers, "sweep")
    runs = pd.DataFrame([{"lambda": lam, "seed": seed, "recall": recall}
                         for (lam, seed), recall in zip(settings, recalls)])
    result = ExperimentResult("lambda", runs, _summarize(runs, "lambda"))
    best_lambda, best_recall = result.best
    logger.info("Best lambda_cons = %g (recall %.2f)", best_lambda, best_recall)
    return result


def ablation_runner(kind: str):
    """Driver for an ExperimentConfig 'ablation' value."""
    runners = {"components": run_component_ablation, "formulation": run_formulation_ablation}
    if kind not in runners:
        raise ConfigError(f"ablation: unknown kind '{kind}'")
    return runners[kind]
