"""
Label spaces and action-goal co-occurrence statistics.

Each goal level gets its own co-occurrence matrix over the shared fine-action
axis. Counts are exact integers; the joint and conditional distributions are
derived from them in double precision and never stored.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix

from anticipation.config import SMOOTHING_EPSILON
from anticipation.errors import DataError, DegenerateColumnError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GoalLevel:
    name: str
    num_goals: int


@dataclass
class LabelSpace:
    """
    Fine-action classes, goal levels and the verb/noun factorization.

    Args:
        num_fine_actions: Number of fine-grained action classes |C|
        goal_levels: Ordered goal levels, finest first
        action_to_verb: Verb id of every action id
        action_to_noun: Noun id of every action id
        num_verbs: Number of verb classes
        num_nouns: Number of noun classes
    """

    num_fine_actions: int
    goal_levels: List[GoalLevel]
    action_to_verb: np.ndarray
    action_to_noun: np.ndarray
    num_verbs: int
    num_nouns: int

    def __post_init__(self):
        self.goal_levels = [g if isinstance(g, GoalLevel) else GoalLevel(**g)
                            for g in self.goal_levels]
        self.action_to_verb = np.asarray(self.action_to_verb, dtype=np.int64)
        self.action_to_noun = np.asarray(self.action_to_noun, dtype=np.int64)
        self.validate()

    def validate(self):
        if self.num_fine_actions <= 0:
            raise DataError("label_space.num_fine_actions must be positive")
        if not self.goal_levels:
            raise DataError("label_space.goal_levels must contain at least one level")
        for k, level in enumerate(self.goal_levels):
            if level.num_goals <= 0:
                raise DataError(f"label_space.goal_levels[{k}].num_goals must be positive")
        if self.num_verbs <= 0 or self.num_nouns <= 0:
            raise DataError("label_space.num_verbs and num_nouns must be positive")
        for name, mapping, bound in (("action_to_verb", self.action_to_verb, self.num_verbs),
                                     ("action_to_noun", self.action_to_noun, self.num_nouns)):
            if mapping.shape != (self.num_fine_actions,):
                raise DataError(f"label_space.{name} must map each of the "
                                f"{self.num_fine_actions} actions exactly once")
            bad = np.flatnonzero((mapping < 0) | (mapping >= bound))
            if bad.size:
                raise DataError(f"label_space.{name}[{bad[0]}] = {mapping[bad[0]]} "
                                f"out of range [0, {bound})")

    @property
    def num_levels(self) -> int:
        return len(self.goal_levels)

    def num_goals(self, level: int) -> int:
        return self.goal_levels[level].num_goals

    def to_dict(self) -> Dict[str, Any]:
        return {
            "num_fine_actions": self.num_fine_actions,
            "goal_levels": [{"name": g.name, "num_goals": g.num_goals} for g in self.goal_levels],
            "action_to_verb": self.action_to_verb.tolist(),
            "action_to_noun": self.action_to_noun.tolist(),
            "num_verbs": self.num_verbs,
            "num_nouns": self.num_nouns,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LabelSpace":
        try:
            return cls(**data)
        except TypeError as e:
            raise DataError(f"label_space: {e}") from e

    def fingerprint(self) -> str:
        """Stable hash used to tie checkpoints to the label space they were trained on."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class CooccurrenceModel:
    """Co-occurrence counts of one goal level and the distributions derived from them."""

    counts: np.ndarray
    joint: np.ndarray
    conditional: np.ndarray
    smoothing_epsilon: float = SMOOTHING_EPSILON
    level: int = field(default=0)

    @property
    def num_goals(self) -> int:
        return self.counts.shape[0]

    @property
    def num_actions(self) -> int:
        return self.counts.shape[1]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "num_goals": self.num_goals,
            "num_actions": self.num_actions,
            "counts": self.counts.ravel().tolist(),
            "epsilon": self.smoothing_epsilon,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], level: int = 0) -> "CooccurrenceModel":
        try:
            shape = (int(data["num_goals"]), int(data["num_actions"]))
            counts = np.asarray(data["counts"], dtype=np.int64)
            epsilon = float(data["epsilon"])
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"hierarchy level {level}: malformed co-occurrence record ({e})") from e
        if counts.size != shape[0] * shape[1]:
            raise DataError(f"hierarchy level {level}: expected {shape[0] * shape[1]} counts, "
                            f"got {counts.size}")
        model = derive_conditional(counts.reshape(shape), epsilon)
        model.level = level
        return model


def build_cooccurrence(records: Sequence[Tuple[int, int]], label_space: LabelSpace,
                       level: int) -> np.ndarray:
    """
    Count how often every (goal, action) pair occurs.

    Args:
        records: (fine_label, goal_label) pairs of the training examples
        label_space: Label space providing |C| and |L| of the level
        level: Goal level index

    Returns:
        |L| x |C| int64 matrix M with M[l, c] = #records with labels (c, l)
    """
    if len(records) == 0:
        raise DataError("cannot build a co-occurrence matrix from zero records")
    pairs = np.asarray(records, dtype=np.int64).reshape(-1, 2)
    actions, goals = pairs[:, 0], pairs[:, 1]
    num_actions = label_space.num_fine_actions
    num_goals = label_space.num_goals(level)

    bad = np.flatnonzero((actions < 0) | (actions >= num_actions))
    if bad.size:
        raise DataError(f"record {bad[0]}: fine label {actions[bad[0]]} out of range [0, {num_actions})")
    bad = np.flatnonzero((goals < 0) | (goals >= num_goals))
    if bad.size:
        raise DataError(f"record {bad[0]}: goal label {goals[bad[0]]} out of range "
                        f"[0, {num_goals}) at level {level}")

    ones = np.ones(len(pairs), dtype=np.int64)
    counts = coo_matrix((ones, (goals, actions)), shape=(num_goals, num_actions)).toarray()
    return counts.astype(np.int64)


def derive_conditional(counts: np.ndarray,
                       smoothing_epsilon: float = SMOOTHING_EPSILON) -> CooccurrenceModel:
    """
    Derive P(l, c) and P(l | c) from co-occurrence counts.

    Each column of the conditional is smoothed with epsilon / |L| before
    normalization, so an action never seen with any goal falls back to the
    uniform goal distribution. With epsilon = 0 such a column is an error.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.ndim != 2 or counts.size == 0:
        raise DataError("co-occurrence counts must be a non-empty 2-D matrix")
    if (counts < 0).any():
        raise DataError("co-occurrence counts must be non-negative")
    if smoothing_epsilon < 0:
        raise DataError("smoothing_epsilon must be non-negative")
    total = int(counts.sum())
    if total <= 0:
        raise DataError("co-occurrence counts are all zero; the joint distribution is undefined")

    num_goals = counts.shape[0]
    joint = counts.astype(np.float64) / total
    column_mass = joint.sum(axis=0)

    if smoothing_epsilon == 0:
        empty = np.flatnonzero(column_mass == 0)
        if empty.size:
            raise DegenerateColumnError(int(empty[0]))

    smoothed = joint + smoothing_epsilon / num_goals
    conditional = smoothed / smoothed.sum(axis=0, keepdims=True)
    return CooccurrenceModel(counts=counts, joint=joint, conditional=conditional,
                             smoothing_epsilon=float(smoothing_epsilon))


def marginalize_action_distribution(action_probs: np.ndarray, mapping: np.ndarray,
                                    num_classes: int = None) -> np.ndarray:
    """
    Sum action probabilities into verb or noun probabilities.

    Works on a single |C| vector or on a batch of shape (n, |C|).
    """
    action_probs = np.asarray(action_probs, dtype=np.float64)
    mapping = np.asarray(mapping, dtype=np.int64)
    if action_probs.shape[-1] != mapping.shape[0]:
        raise DataError(f"expected {mapping.shape[0]} action probabilities, got {action_probs.shape[-1]}")
    if not np.allclose(action_probs.sum(axis=-1), 1.0, rtol=0.0, atol=1e-9):
        raise DataError("action probabilities must sum to 1 (within 1e-9)")
    if num_classes is None:
        num_classes = int(mapping.max()) + 1
    projection = np.zeros((mapping.shape[0], num_classes))
    projection[np.arange(mapping.shape[0]), mapping] = 1.0
    return action_probs @ projection


def save_hierarchy(models: List[CooccurrenceModel], path: str):
    """Write one co-occurrence record per goal level as JSON."""
    document = {"levels": [m.to_dict() for m in models]}
    with open(path, "w") as f:
        json.dump(document, f, sort_keys=True, indent=2)
        f.write("\n")
    logger.info("Hierarchy saved to %s (%d level(s))", path, len(models))


def load_hierarchy(path: str) -> List[CooccurrenceModel]:
    """Read a hierarchy file and re-derive every conditional."""
    try:
        with open(path) as f:
            document = json.load(f)
    except FileNotFoundError as e:
        raise DataError(f"hierarchy file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"hierarchy file {path} is not valid JSON: {e}") from e
    levels = document.get("levels") if isinstance(document, dict) else None
    if not levels:
        raise DataError(f"hierarchy file {path} has no levels")
    return [CooccurrenceModel.from_dict(level, level=k) for k, level in enumerate(levels)]


def cooccurrence_from_manifest(manifest, split: str = "train",
                               smoothing_epsilon: float = SMOOTHING_EPSILON) -> List[CooccurrenceModel]:
    """
    Build one co-occurrence model per goal level from a manifest split.

    Only the training split is accepted: the statistics must not see
    validation labels.
    """
    if split != "train":
        raise DataError(f"co-occurrence statistics must come from the training split, not '{split}'")
    records = manifest.split_records(split)
    space = manifest.label_space
    models = []
    for level in range(space.num_levels):
        pairs = [(r.fine_label, r.goal_labels[level]) for r in records]
        model = derive_conditional(build_cooccurrence(pairs, space, level), smoothing_epsilon)
        model.level = level
        models.append(model)
        logger.info("Level %d (%s): %d x %d co-occurrence matrix from %d records",
                    level, space.goal_levels[level].name, model.num_goals,
                    model.num_actions, model.total)
    return models
