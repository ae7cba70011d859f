"""
Two-branch anticipation model.
A shared trunk over the observed snippets feeds a fine-action head and one goal head per level.
"""

import json
import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from anticipation.dataset import FeatureBatch, TENSOR_VERSION, read_tensor, write_tensor
from anticipation.errors import DataError
from anticipation.hierarchy import LabelSpace

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "goal-consistent-anticipation"


@dataclass
class ModelParams:
    """
    Trunk and head weights of the two-branch predictor.

    trunk: D x H, fine head: H x |C|, goal head k: H x |L_k|. The same
    container holds parameter gradients.
    """

    trunk_w: np.ndarray
    trunk_b: np.ndarray
    fine_head_w: np.ndarray
    fine_head_b: np.ndarray
    goal_heads: List[Tuple[np.ndarray, np.ndarray]]

    @property
    def feature_dim(self) -> int:
        return self.trunk_w.shape[0]

    @property
    def hidden_width(self) -> int:
        return self.trunk_w.shape[1]

    def named_tensors(self) -> List[Tuple[str, np.ndarray]]:
        """All tensors in declared field order."""
        tensors = [("trunk_w", self.trunk_w), ("trunk_b", self.trunk_b),
                   ("fine_head_w", self.fine_head_w), ("fine_head_b", self.fine_head_b)]
        for k, (w, b) in enumerate(self.goal_heads):
            tensors += [(f"goal_heads.{k}.w", w), (f"goal_heads.{k}.b", b)]
        return tensors

    def copy(self) -> "ModelParams":
        return ModelParams(self.trunk_w.copy(), self.trunk_b.copy(),
                           self.fine_head_w.copy(), self.fine_head_b.copy(),
                           [(w.copy(), b.copy()) for w, b in self.goal_heads])

    def zeros_like(self) -> "ModelParams":
        return ModelParams(np.zeros_like(self.trunk_w), np.zeros_like(self.trunk_b),
                           np.zeros_like(self.fine_head_w), np.zeros_like(self.fine_head_b),
                           [(np.zeros_like(w), np.zeros_like(b)) for w, b in self.goal_heads])

    def validate(self, label_space: LabelSpace, feature_dim: int = None):
        if feature_dim is not None and self.feature_dim != feature_dim:
            raise DataError(f"model expects feature dim {self.feature_dim}, data has {feature_dim}")
        if self.fine_head_w.shape[1] != label_space.num_fine_actions:
            raise DataError(f"fine head has {self.fine_head_w.shape[1]} outputs, label space has "
                            f"{label_space.num_fine_actions} actions")
        if len(self.goal_heads) != label_space.num_levels:
            raise DataError(f"model has {len(self.goal_heads)} goal head(s), label space has "
                            f"{label_space.num_levels} goal level(s)")
        for k, (w, _) in enumerate(self.goal_heads):
            if w.shape[1] != label_space.num_goals(k):
                raise DataError(f"goal head {k} has {w.shape[1]} outputs, expected "
                                f"{label_space.num_goals(k)}")
        for name, tensor in self.named_tensors():
            if not np.isfinite(tensor).all():
                raise DataError(f"parameter {name} has non-finite entries")


@dataclass
class ForwardOutput:
    """Pre-softmax logits of both branches plus the trunk activation kept for backward."""

    fine_logits: np.ndarray
    goal_logits: List[np.ndarray]
    trunk_activation: np.ndarray


def init_params(label_space: LabelSpace, feature_dim: int, hidden_width: int,
                seed: int) -> ModelParams:
    """
    Initialize weights uniformly in +-sqrt(6 / (fan_in + fan_out)); biases start at zero.
    """
    if feature_dim <= 0 or hidden_width <= 0:
        raise DataError("feature_dim and hidden_width must be positive")
    rng = np.random.default_rng(seed)

    def uniform(fan_in: int, fan_out: int) -> np.ndarray:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    trunk_w = uniform(feature_dim, hidden_width)
    fine_head_w = uniform(hidden_width, label_space.num_fine_actions)
    goal_heads = []
    for level in label_space.goal_levels:
        goal_heads.append((uniform(hidden_width, level.num_goals), np.zeros(level.num_goals)))
    return ModelParams(trunk_w=trunk_w, trunk_b=np.zeros(hidden_width),
                       fine_head_w=fine_head_w, fine_head_b=np.zeros(label_space.num_fine_actions),
                       goal_heads=goal_heads)


def _pool(params: ModelParams, features: FeatureBatch) -> Tuple[np.ndarray, bool]:
    """Mean over snippets. Returns (B x D pooled features, whether input was a single segment)."""
    if isinstance(features, (list, tuple)):
        segments = [np.asarray(s, dtype=np.float64) for s in features]
        for s in segments:
            if s.ndim != 2 or s.shape[0] < 1:
                raise DataError("every segment must be an S x D matrix with S >= 1")
        pooled, single = np.stack([s.mean(axis=0) for s in segments]), False
    else:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim == 2:
            pooled, single = features.mean(axis=0, keepdims=True), True
        elif features.ndim == 3:
            pooled, single = features.mean(axis=1), False
        else:
            raise DataError(f"features must be S x D or B x S x D, got shape {features.shape}")
    if pooled.shape[1] != params.feature_dim:
        raise DataError(f"features have dimension {pooled.shape[1]}, model expects "
                        f"{params.feature_dim}")
    return pooled, single


def forward(params: ModelParams, features: FeatureBatch) -> ForwardOutput:
    """
    Compute logits for one segment (S x D) or a batch (B x S x D, or a list of segments).

    h = relu(mean_s(V_o) W + b), fine = h W_F + b_F, goal_k = h W_Gk + b_Gk
    """
    pooled, single = _pool(params, features)
    hidden = np.maximum(pooled @ params.trunk_w + params.trunk_b, 0.0)
    fine_logits = hidden @ params.fine_head_w + params.fine_head_b
    goal_logits = [hidden @ w + b for w, b in params.goal_heads]
    if single:
        return ForwardOutput(fine_logits[0], [g[0] for g in goal_logits], hidden[0])
    return ForwardOutput(fine_logits, goal_logits, hidden)


def backward(params: ModelParams, features: FeatureBatch, output: ForwardOutput,
             grad_fine_logits: np.ndarray, grad_goal_logits: List[np.ndarray]) -> ModelParams:
    """
    Chain logit gradients back to every parameter.

    Gradients are summed over the batch; the relu subgradient at 0 is 0.
    """
    pooled, _ = _pool(params, features)
    hidden = np.atleast_2d(output.trunk_activation)
    grad_fine = np.atleast_2d(np.asarray(grad_fine_logits, dtype=np.float64))
    if grad_fine.shape != (hidden.shape[0], params.fine_head_w.shape[1]):
        raise DataError(f"fine logit gradient has shape {np.shape(grad_fine_logits)}, expected "
                        f"{np.shape(output.fine_logits)}")
    if len(grad_goal_logits) != len(params.goal_heads):
        raise DataError(f"expected {len(params.goal_heads)} goal gradient(s), got {len(grad_goal_logits)}")

    grads = params.zeros_like()
    grads.fine_head_w = hidden.T @ grad_fine
    grads.fine_head_b = grad_fine.sum(axis=0)
    grad_hidden = grad_fine @ params.fine_head_w.T

    for k, ((w, _), g) in enumerate(zip(params.goal_heads, grad_goal_logits)):
        g = np.atleast_2d(np.asarray(g, dtype=np.float64))
        if g.shape != (hidden.shape[0], w.shape[1]):
            raise DataError(f"goal logit gradient {k} has shape {g.shape}, expected "
                            f"{(hidden.shape[0], w.shape[1])}")
        grads.goal_heads[k] = (hidden.T @ g, g.sum(axis=0))
        grad_hidden = grad_hidden + g @ w.T

    grad_pre = grad_hidden * (hidden > 0)
    grads.trunk_w = pooled.T @ grad_pre
    grads.trunk_b = grad_pre.sum(axis=0)
    return grads


def count_params(params: ModelParams) -> Dict[str, int]:
    """Parameter counts of the trunk, the fine head and the goal heads."""
    counts = {
        "trunk": params.trunk_w.size + params.trunk_b.size,
        "fine_head": params.fine_head_w.size + params.fine_head_b.size,
        "goal_heads": sum(w.size + b.size for w, b in params.goal_heads),
    }
    counts["total"] = sum(counts.values())
    return counts


# --- CHECKPOINTS ---

def save_checkpoint(params: ModelParams, filepath: str, label_space: LabelSpace, seed: int):
    """
    Save a checkpoint: one JSON header line, then every tensor in field order
    using the feature-store layout with float64 payloads.
    """
    header = {
        "format": CHECKPOINT_MAGIC,
        "feature_dim": params.feature_dim,
        "hidden_width": params.hidden_width,
        "num_fine_actions": params.fine_head_w.shape[1],
        "goal_levels": [w.shape[1] for w, _ in params.goal_heads],
        "seed": seed,
        "label_space_hash": label_space.fingerprint(),
        "tensors": [name for name, _ in params.named_tensors()],
    }
    with open(filepath, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for _, tensor in params.named_tensors():
            write_tensor(f, tensor, TENSOR_VERSION)
    logger.info("Model saved to %s", filepath)


def load_checkpoint(filepath: str, label_space: LabelSpace = None) -> Tuple[ModelParams, Dict]:
    """Load a checkpoint; if a label space is given, its hash must match the header."""
    try:
        with open(filepath, "rb") as f:
            header = json.loads(f.readline().decode("utf-8"))
            if header.get("format") != CHECKPOINT_MAGIC:
                raise DataError(f"{filepath} is not a model checkpoint")
            tensors = [read_tensor(f) for _ in header["tensors"]]
    except FileNotFoundError as e:
        raise DataError(f"checkpoint not found: {filepath}") from e
    except (json.JSONDecodeError, UnicodeDecodeError, KeyError) as e:
        raise DataError(f"checkpoint {filepath} has a malformed header: {e}") from e

    if label_space is not None and header["label_space_hash"] != label_space.fingerprint():
        raise DataError(f"checkpoint {filepath} was trained on a different label space")

    def vector(t: np.ndarray) -> np.ndarray:
        return t.reshape(-1)

    goal_heads = [(tensors[i], vector(tensors[i + 1])) for i in range(4, len(tensors), 2)]
    params = ModelParams(trunk_w=tensors[0], trunk_b=vector(tensors[1]),
                         fine_head_w=tensors[2], fine_head_b=vector(tensors[3]),
                         goal_heads=goal_heads)
    logger.info("Model loaded from %s", filepath)
    return params, header
