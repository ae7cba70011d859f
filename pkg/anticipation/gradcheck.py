"""
Finite-difference checks of every analytic gradient.

Each check draws a random small instance, compares the analytic gradient with
central differences and reports the relative error
max|analytic - numeric| / max(max|analytic|, max|numeric|, floor).
"""

import logging
from typing import Callable, Dict, List

import numpy as np
import pandas as pd

from anticipation.ai.losses import (consistency_loss_ce, consistency_loss_kl, cross_entropy,
                                    total_loss)
from anticipation.ai.model import ForwardOutput, backward, forward, init_params
from anticipation.config import LossConfig
from anticipation.dataset import LabelBatch
from anticipation.errors import CheckFailure
from anticipation.hierarchy import GoalLevel, LabelSpace, derive_conditional

logger = logging.getLogger(__name__)

STEP = 1e-5
TOLERANCE = 1e-4
ABS_FLOOR = 1e-7
MAX_DIM = 16


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray,
                       step: float = STEP) -> np.ndarray:
    """Numerical gradient of a scalar function; `x` is perturbed in place and restored."""
    grad = np.zeros_like(x)
    flat, out = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        plus = f(x)
        flat[i] = original - step
        minus = f(x)
        flat[i] = original
        out[i] = (plus - minus) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = ABS_FLOOR) -> float:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def random_conditional(rng: np.random.Generator, num_goals: int, num_actions: int) -> np.ndarray:
    counts = rng.integers(0, 6, size=(num_goals, num_actions))
    counts[rng.integers(num_goals), rng.integers(num_actions)] += 1
    return derive_conditional(counts, 1e-6).conditional


def _dims(rng: np.random.Generator, high: int = MAX_DIM):
    return int(rng.integers(2, high + 1)), int(rng.integers(2, high + 1)), int(rng.integers(1, 5))


def check_cross_entropy(rng: np.random.Generator) -> float:
    num_classes, _, batch = _dims(rng)
    logits = rng.normal(scale=2.0, size=(batch, num_classes))
    labels = rng.integers(num_classes, size=batch)
    _, grad = cross_entropy(logits, labels)
    numeric = central_difference(lambda z: cross_entropy(z, labels)[0].sum(), logits)
    return relative_error(grad, numeric)


def check_consistency_ce(rng: np.random.Generator) -> float:
    num_actions, num_goals, batch = _dims(rng)
    conditional = random_conditional(rng, num_goals, num_actions)
    logits = rng.normal(scale=2.0, size=(batch, num_actions))
    goals = rng.integers(num_goals, size=batch)
    _, grad = consistency_loss_ce(logits, conditional, goals)
    numeric = central_difference(lambda z: consistency_loss_ce(z, conditional, goals)[0].sum(), logits)
    return relative_error(grad, numeric)


def check_consistency_kl(rng: np.random.Generator) -> float:
    num_actions, num_goals, batch = _dims(rng)
    conditional = random_conditional(rng, num_goals, num_actions)
    fine = rng.normal(scale=2.0, size=(batch, num_actions))
    goal = rng.normal(scale=2.0, size=(batch, num_goals))
    _, grad_fine, grad_goal = consistency_loss_kl(fine, conditional, goal)
    numeric_fine = central_difference(
        lambda z: consistency_loss_kl(z, conditional, goal)[0].sum(), fine)
    numeric_goal = central_difference(
        lambda z: consistency_loss_kl(fine, conditional, z)[0].sum(), goal)
    return max(relative_error(grad_fine, numeric_fine), relative_error(grad_goal, numeric_goal))


def _random_labels(rng: np.random.Generator, batch: int, num_actions: int,
                   goal_sizes: List[int]) -> LabelBatch:
    zeros = np.zeros(batch, dtype=np.int64)
    return LabelBatch(indices=np.arange(batch), fine=rng.integers(num_actions, size=batch),
                      goals=[rng.integers(size, size=batch) for size in goal_sizes],
                      verbs=zeros, nouns=zeros)


def check_total_loss(rng: np.random.Generator) -> float:
    num_actions, _, batch = _dims(rng)
    goal_sizes = [int(rng.integers(2, MAX_DIM + 1)) for _ in range(int(rng.integers(1, 3)))]
    cooccurrence = []
    for size in goal_sizes:
        counts = rng.integers(0, 6, size=(size, num_actions))
        counts[0, 0] += 1
        cooccurrence.append(derive_conditional(counts, 1e-6))
    config = LossConfig(lambda_cons=float(rng.uniform(0.1, 5.0)),
                        consistency_variant=str(rng.choice(["ground-truth-ce", "predicted-kl"])))
    labels = _random_labels(rng, batch, num_actions, goal_sizes)
    fine = rng.normal(scale=2.0, size=(batch, num_actions))
    goals = [rng.normal(scale=2.0, size=(batch, size)) for size in goal_sizes]

    def loss_of(fine_logits, goal_logits):
        output = ForwardOutput(fine_logits, goal_logits, np.zeros((batch, 1)))
        return total_loss(output, labels, cooccurrence, config)

    breakdown = loss_of(fine, goals)
    errors = [relative_error(breakdown.grad_fine_logits,
                             central_difference(lambda z: loss_of(z, goals).total, fine))]
    for k in range(len(goals)):
        def at_level(z, k=k):
            perturbed = list(goals)
            perturbed[k] = z
            return loss_of(fine, perturbed).total
        errors.append(relative_error(breakdown.grad_goal_logits[k],
                                     central_difference(at_level, goals[k])))
    return max(errors)


def check_model_backward(rng: np.random.Generator) -> float:
    num_actions, num_goals, batch = _dims(rng)
    feature_dim, hidden = int(rng.integers(2, MAX_DIM + 1)), int(rng.integers(2, MAX_DIM + 1))
    space = LabelSpace(num_fine_actions=num_actions, goal_levels=[GoalLevel("goal", num_goals)],
                       action_to_verb=np.zeros(num_actions, dtype=np.int64),
                       action_to_noun=np.zeros(num_actions, dtype=np.int64),
                       num_verbs=1, num_nouns=1)
    params = init_params(space, feature_dim, hidden, int(rng.integers(1 << 31)))
    params.trunk_b = rng.normal(scale=0.1, size=hidden)
    params.fine_head_b = rng.normal(size=num_actions)

    # Keep pre-activations away from the relu kink so differences stay smooth
    while True:
        features = rng.normal(size=(batch, int(rng.integers(1, 5)), feature_dim))
        pre = features.mean(axis=1) @ params.trunk_w + params.trunk_b
        if np.abs(pre).min() > 1e-3:
            break

    upstream_fine = rng.normal(size=(batch, num_actions))
    upstream_goal = [rng.normal(size=(batch, num_goals))]

    def objective(_=None) -> float:
        out = forward(params, features)
        return float(np.sum(upstream_fine * out.fine_logits)
                     + sum(np.sum(u * g) for u, g in zip(upstream_goal, out.goal_logits)))

    grads = backward(params, features, forward(params, features), upstream_fine, upstream_goal)
    errors = []
    for (_, tensor), (_, grad) in zip(params.named_tensors(), grads.named_tensors()):
        errors.append(relative_error(grad, central_difference(objective, tensor)))
    return max(errors)


CHECKS: Dict[str, Callable[[np.random.Generator], float]] = {
    "cross_entropy": check_cross_entropy,
    "consistency_loss_ce": check_consistency_ce,
    "consistency_loss_kl": check_consistency_kl,
    "total_loss": check_total_loss,
    "model_backward": check_model_backward,
}


def run_gradcheck(trials: int = 100, seed: int = 0, tolerance: float = TOLERANCE) -> pd.DataFrame:
    """
    Run every check `trials` times.

    Returns:
        DataFrame with one row per (check, trial): relative error and pass flag
    """
    rng = np.random.default_rng(seed)
    rows = []
    for name, check in CHECKS.items():
        errors = [check(rng) for _ in range(trials)]
        rows += [{"check": name, "trial": t, "relative_error": e, "passed": e < tolerance}
                 for t, e in enumerate(errors)]
        logger.info("%-20s max relative error %.2e over %d trials", name, max(errors), trials)
    return pd.DataFrame(rows, columns=["check", "trial", "relative_error", "passed"])


def assert_gradients(results: pd.DataFrame):
    """Raise CheckFailure naming the first failing check."""
    failed = results[~results["passed"]]
    if len(failed):
        worst = failed.loc[failed["relative_error"].idxmax()]
        raise CheckFailure(f"{worst['check']}: relative error {worst['relative_error']:.2e} "
                           f"in trial {worst['trial']} ({len(failed)} failing trial(s))")
