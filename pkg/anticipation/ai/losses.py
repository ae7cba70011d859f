"""
Training objectives with analytic gradients w.r.t. logits.

Every loss accepts a single logit vector or a batch (B x K) and returns per-example
values; `total_loss` reduces them over the batch. Probabilities inside logs are
floored at `log_clamp_epsilon`; below the floor the gradient of that term is zero.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.special import softmax as _softmax

from anticipation.config import LOG_CLAMP_EPSILON, LossConfig
from anticipation.errors import ConfigError, DataError
from anticipation.hierarchy import CooccurrenceModel

logger = logging.getLogger(__name__)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax over the last axis."""
    return _softmax(np.asarray(logits, dtype=np.float64), axis=-1)


def _softmax_vjp(probs: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """J_softmax^T u = p * (u - <u, p>)"""
    return probs * (upstream - np.sum(upstream * probs, axis=-1, keepdims=True))


def _check_labels(labels: np.ndarray, num_classes: int, what: str):
    bad = np.flatnonzero((labels < 0) | (labels >= num_classes))
    if bad.size:
        raise DataError(f"{what} label {labels.ravel()[bad[0]]} out of range [0, {num_classes})")


def _pick(matrix: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return np.take_along_axis(matrix, labels[..., None], axis=-1)[..., 0]


def cross_entropy(logits: np.ndarray, true_label,
                  log_clamp_epsilon: float = LOG_CLAMP_EPSILON) -> Tuple[np.ndarray, np.ndarray]:
    """
    -log softmax(logits)[true_label] and its gradient softmax - onehot.

    Returns per-example losses (a scalar array for a single vector).
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(true_label, dtype=np.int64)
    _check_labels(labels, logits.shape[-1], "true")
    probs = softmax(logits)
    p_true = _pick(probs, labels)
    loss = -np.log(np.maximum(p_true, log_clamp_epsilon))

    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, labels[..., None], 1.0, axis=-1)
    grad = (probs - onehot) * np.asarray(p_true >= log_clamp_epsilon)[..., None]
    return loss, grad


def remap_to_goal(fine_probs: np.ndarray, conditional: np.ndarray) -> np.ndarray:
    """G[l] = sum_c P(l | c) F[c], for one distribution or a batch."""
    fine_probs = np.asarray(fine_probs, dtype=np.float64)
    conditional = np.asarray(conditional, dtype=np.float64)
    if fine_probs.shape[-1] != conditional.shape[1]:
        raise DataError(f"fine distribution has {fine_probs.shape[-1]} actions, conditional "
                        f"has {conditional.shape[1]}")
    if not np.allclose(fine_probs.sum(axis=-1), 1.0, rtol=0.0, atol=1e-9) or (fine_probs < 0).any():
        raise DataError("fine probabilities must lie on the simplex")
    if not np.allclose(conditional.sum(axis=0), 1.0, rtol=0.0, atol=1e-9) or (conditional < 0).any():
        raise DataError("every conditional column must lie on the simplex")
    return fine_probs @ conditional.T


def consistency_loss_ce(fine_logits: np.ndarray, conditional: np.ndarray, true_goal,
                        log_clamp_epsilon: float = LOG_CLAMP_EPSILON) -> Tuple[np.ndarray, np.ndarray]:
    """
    Cross-entropy between the remapped goal distribution and the true goal.

    grad = J_softmax^T (-P(l* | .) / G[l*])
    """
    fine_logits = np.asarray(fine_logits, dtype=np.float64)
    goals = np.asarray(true_goal, dtype=np.int64)
    _check_labels(goals, conditional.shape[0], "goal")
    probs = softmax(fine_logits)
    remapped = remap_to_goal(probs, conditional)
    g_true = _pick(remapped, goals)
    loss = -np.log(np.maximum(g_true, log_clamp_epsilon))

    rows = conditional[goals]
    active = np.asarray(g_true >= log_clamp_epsilon)
    upstream = -rows / np.where(active, g_true, 1.0)[..., None]
    grad = _softmax_vjp(probs, upstream) * active[..., None]
    return loss, grad


def _floor_renormalize(x: np.ndarray, eps: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    clamped = np.maximum(x, eps)
    total = clamped.sum(axis=-1, keepdims=True)
    return clamped / total, total, x > eps


def _floor_renormalize_vjp(out: np.ndarray, total: np.ndarray, active: np.ndarray,
                           upstream: np.ndarray) -> np.ndarray:
    return active / total * (upstream - np.sum(upstream * out, axis=-1, keepdims=True))


def consistency_loss_kl(fine_logits: np.ndarray, conditional: np.ndarray, goal_logits: np.ndarray,
                        log_clamp_epsilon: float = LOG_CLAMP_EPSILON
                        ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    KL(softmax(goal_logits) || G) with G remapped from the fine branch.

    The goal-branch prediction is the first argument. Both distributions are
    floored at the clamp epsilon and renormalized before the divergence.

    Returns:
        (per-example loss, grad w.r.t. fine logits, grad w.r.t. goal logits)
    """
    fine_logits = np.asarray(fine_logits, dtype=np.float64)
    goal_logits = np.asarray(goal_logits, dtype=np.float64)
    if goal_logits.shape[-1] != conditional.shape[0]:
        raise DataError(f"goal logits have {goal_logits.shape[-1]} entries, conditional has "
                        f"{conditional.shape[0]} goals")
    if goal_logits.shape[:-1] != fine_logits.shape[:-1]:
        raise DataError("fine and goal logits disagree on the batch shape")

    fine_probs = softmax(fine_logits)
    goal_probs = softmax(goal_logits)
    remapped = remap_to_goal(fine_probs, conditional)

    p, p_total, p_active = _floor_renormalize(goal_probs, log_clamp_epsilon)
    q, q_total, q_active = _floor_renormalize(remapped, log_clamp_epsilon)
    log_ratio = np.log(p) - np.log(q)
    loss = np.sum(p * log_ratio, axis=-1)

    grad_p = _floor_renormalize_vjp(p, p_total, p_active, log_ratio + 1.0)
    grad_goal = _softmax_vjp(goal_probs, grad_p)

    grad_q = _floor_renormalize_vjp(q, q_total, q_active, -p / q)
    grad_fine = _softmax_vjp(fine_probs, grad_q @ conditional)
    return loss, grad_fine, grad_goal


@dataclass
class LossBreakdown:
    """
    Batch-mean value of every loss term plus gradients of the mean total.

    Sums over the batch are `value * batch_size`; `as_dict` reports both.
    """

    fine_ce: float
    goal_ce: List[float]
    consistency: List[float]
    total: float
    grad_fine_logits: np.ndarray
    grad_goal_logits: List[np.ndarray]
    batch_size: int = 1
    lambdas: List[float] = field(default_factory=list)

    def as_dict(self) -> Dict[str, float]:
        means = {"fine_ce": self.fine_ce, "total": self.total}
        for k, value in enumerate(self.goal_ce):
            means[f"goal_ce_{k}"] = value
        for k, value in enumerate(self.consistency):
            means[f"consistency_{k}"] = value
        row = dict(means)
        row.update({f"{key}_sum": value * self.batch_size for key, value in means.items()})
        return row


def total_loss(output, labels, cooccurrence: Sequence[CooccurrenceModel],
               config: LossConfig) -> LossBreakdown:
    """
    L = L_fine + sum_k L_goal_k + sum_k lambda_k L_cons_k, averaged over the batch.

    Args:
        output: ForwardOutput of a batch (or a single segment)
        labels: LabelBatch (fine labels and one goal label array per level)
        cooccurrence: One CooccurrenceModel per goal level; may be empty when
            consistency is disabled
        config: Which terms are active and their weights

    Returns:
        LossBreakdown whose gradients are those of the batch-mean total
    """
    fine_logits = np.atleast_2d(output.fine_logits)
    goal_logits = [np.atleast_2d(g) for g in output.goal_logits]
    batch = fine_logits.shape[0]
    fine_labels = np.atleast_1d(np.asarray(labels.fine, dtype=np.int64))
    goal_labels = [np.atleast_1d(np.asarray(g, dtype=np.int64)) for g in labels.goals]
    if len(goal_labels) != len(goal_logits):
        raise DataError(f"{len(goal_logits)} goal head(s) but {len(goal_labels)} goal label level(s)")
    if config.use_consistency and len(cooccurrence) < len(goal_logits):
        raise ConfigError("loss.use_consistency: requires one co-occurrence model per goal level")
    eps = config.log_clamp_epsilon

    fine_loss, grad_fine = cross_entropy(fine_logits, fine_labels, eps)
    grad_fine = grad_fine / batch
    grad_goals = [np.zeros_like(g) for g in goal_logits]
    goal_values = [0.0] * len(goal_logits)
    cons_values = [0.0] * len(goal_logits)
    lambdas = [0.0] * len(goal_logits)
    total = float(fine_loss.mean())

    for k, logits in enumerate(goal_logits):
        if config.use_goal_loss:
            loss, grad = cross_entropy(logits, goal_labels[k], eps)
            goal_values[k] = float(loss.mean())
            grad_goals[k] = grad_goals[k] + grad / batch
            total += goal_values[k]

        if config.use_consistency:
            lam = config.lambda_for(k)
            lambdas[k] = lam
            conditional = cooccurrence[k].conditional
            if config.consistency_variant == "ground-truth-ce":
                loss, grad = consistency_loss_ce(fine_logits, conditional, goal_labels[k], eps)
            else:
                loss, grad, grad_g = consistency_loss_kl(fine_logits, conditional, logits, eps)
                grad_goals[k] = grad_goals[k] + lam * grad_g / batch
            cons_values[k] = float(loss.mean())
            grad_fine = grad_fine + lam * grad / batch
            total += lam * cons_values[k]

    single = np.ndim(output.fine_logits) == 1
    return LossBreakdown(
        fine_ce=float(fine_loss.mean()),
        goal_ce=goal_values,
        consistency=cons_values,
        total=total,
        grad_fine_logits=grad_fine[0] if single else grad_fine,
        grad_goal_logits=[g[0] for g in grad_goals] if single else grad_goals,
        batch_size=batch,
        lambdas=lambdas,
    )
