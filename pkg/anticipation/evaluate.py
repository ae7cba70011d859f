"""
Class-mean Top-K recall for anticipation, per view and across views.

Only the fine-action branch is scored; verb and noun scores are obtained by
summing action probabilities into their verb / noun classes.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from anticipation.ai.losses import softmax
from anticipation.ai.model import forward
from anticipation.config import TOP_K
from anticipation.dataset import DatasetManifest, SegmentRecord, gather_features
from anticipation.errors import DataError
from anticipation.hierarchy import LabelSpace, marginalize_action_distribution

logger = logging.getLogger(__name__)

KINDS = ("action", "verb", "noun")
PROTOCOLS = ("per_view", "multi_view")
SUBSETS = ("overall", "unseen", "tail")

PREDICT_CHUNK = 512


@dataclass
class PredictionSet:
    """Fine-action distributions, one row per record."""

    probs: np.ndarray
    records: List[SegmentRecord]

    def __post_init__(self):
        self.probs = np.atleast_2d(np.asarray(self.probs, dtype=np.float64))
        if self.probs.shape[0] != len(self.records):
            raise DataError(f"{self.probs.shape[0]} prediction rows for {len(self.records)} records")
        if not self.records:
            return
        if (self.probs < 0).any() or not np.allclose(self.probs.sum(axis=1), 1.0,
                                                     rtol=0.0, atol=1e-6):
            raise DataError("every prediction must be a probability distribution")
        # Rows within the tolerance are snapped onto the simplex
        self.probs = self.probs / self.probs.sum(axis=1, keepdims=True)

    def __len__(self) -> int:
        return len(self.records)

    def subset(self, mask: np.ndarray) -> "PredictionSet":
        keep = np.flatnonzero(mask)
        return PredictionSet(self.probs[keep], [self.records[i] for i in keep])


@dataclass
class EvalCell:
    recall: float
    class_count: int
    per_class: Dict[int, float] = field(default_factory=dict)


@dataclass
class EvalReport:
    """
    Class-mean Top-K recall (percent) per label kind x protocol x subset.

    Subsets without any eligible record are absent, not zero.
    """

    k: int
    cells: Dict[Tuple[str, str, str], EvalCell] = field(default_factory=OrderedDict)

    def recall(self, kind: str = "action", protocol: str = "per_view",
               subset: str = "overall") -> Optional[float]:
        cell = self.cells.get((kind, protocol, subset))
        return None if cell is None else cell.recall

    def to_frame(self) -> pd.DataFrame:
        rows = [{"kind": kind, "protocol": protocol, "subset": subset,
                 "recall": cell.recall, "class_count": cell.class_count}
                for (kind, protocol, subset), cell in self.cells.items()]
        return pd.DataFrame(rows, columns=["kind", "protocol", "subset", "recall", "class_count"])

    def to_dict(self) -> Dict:
        return {
            "k": self.k,
            "cells": [{"kind": kind, "protocol": protocol, "subset": subset,
                       "recall": cell.recall, "class_count": cell.class_count,
                       "per_class": {str(c): r for c, r in cell.per_class.items()}}
                      for (kind, protocol, subset), cell in self.cells.items()],
        }

    def flat(self) -> Dict[str, float]:
        """Recalls keyed 'kind/protocol/subset', for history rows."""
        return {f"{kind}/{protocol}/{subset}": cell.recall
                for (kind, protocol, subset), cell in self.cells.items()}


def topk_classmean_recall(predictions: np.ndarray, labels: np.ndarray, k: int,
                          num_classes: int) -> Tuple[float, np.ndarray]:
    """
    Class-mean Top-K recall in percent.

    A sample is a hit when its label is among the K highest scores, ties going
    to the lower class index. Classes without samples are left out of the mean.

    Returns:
        (mean recall in percent, per-class recall in [0, 1] with NaN for absent classes)
    """
    predictions = np.atleast_2d(np.asarray(predictions, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    if k < 1:
        raise DataError("k must be >= 1")
    if labels.size == 0:
        raise DataError("cannot compute recall over zero samples")
    if predictions.shape != (labels.size, num_classes):
        raise DataError(f"predictions have shape {predictions.shape}, expected "
                        f"({labels.size}, {num_classes})")
    if ((labels < 0) | (labels >= num_classes)).any():
        raise DataError(f"labels must lie in [0, {num_classes})")

    top = np.argsort(-predictions, axis=1, kind="stable")[:, :k]
    hits = (top == labels[:, None]).any(axis=1)
    instances = np.bincount(labels, minlength=num_classes)
    hit_counts = np.bincount(labels, weights=hits.astype(np.float64), minlength=num_classes)

    per_class = np.full(num_classes, np.nan)
    present = instances > 0
    per_class[present] = hit_counts[present] / instances[present]
    return float(np.mean(per_class[present]) * 100.0), per_class


def multiview_aggregate(predictions: PredictionSet) -> PredictionSet:
    """
    One prediction per sequence: the mean of its views' distributions, renormalized.

    The first view's record represents the sequence.
    """
    groups: "OrderedDict[str, List[int]]" = OrderedDict()
    for i, record in enumerate(predictions.records):
        groups.setdefault(record.sequence_id, []).append(i)

    probs, records = [], []
    for sequence_id, members in groups.items():
        first = predictions.records[members[0]]
        for i in members[1:]:
            other = predictions.records[i]
            if (other.fine_label, list(other.goal_labels)) != (first.fine_label, list(first.goal_labels)):
                raise DataError(f"sequence {sequence_id}: views {first.view_id} and "
                                f"{other.view_id} carry different labels")
        mean = predictions.probs[members].mean(axis=0)
        probs.append(mean / mean.sum())
        records.append(first)
    return PredictionSet(np.array(probs).reshape(len(records), -1), records)


def predict(params, manifest: DatasetManifest, split: str) -> PredictionSet:
    """Fine-branch softmax for every record of a split, in split order."""
    indices = manifest.split_indices(split)
    if indices.size == 0:
        raise DataError(f"split '{split}' is empty")
    chunks = []
    for start in range(0, len(indices), PREDICT_CHUNK):
        chunk = indices[start:start + PREDICT_CHUNK]
        output = forward(params, gather_features(manifest, chunk))
        chunks.append(softmax(np.atleast_2d(output.fine_logits)))
    return PredictionSet(np.concatenate(chunks), [manifest.records[i] for i in indices])


def _kind_scores(predictions: PredictionSet, label_space: LabelSpace, kind: str):
    if kind == "action":
        return (predictions.probs, np.array([r.fine_label for r in predictions.records]),
                label_space.num_fine_actions)
    if kind == "verb":
        scores = marginalize_action_distribution(predictions.probs, label_space.action_to_verb,
                                                 label_space.num_verbs)
        return scores, np.array([r.verb_label for r in predictions.records]), label_space.num_verbs
    scores = marginalize_action_distribution(predictions.probs, label_space.action_to_noun,
                                             label_space.num_nouns)
    return scores, np.array([r.noun_label for r in predictions.records]), label_space.num_nouns


def _subset_mask(predictions: PredictionSet, subset: str) -> np.ndarray:
    if subset == "unseen":
        return np.array([r.is_unseen for r in predictions.records], dtype=bool)
    if subset == "tail":
        return np.array([r.is_tail for r in predictions.records], dtype=bool)
    return np.ones(len(predictions), dtype=bool)


def evaluate_predictions(predictions: PredictionSet, label_space: LabelSpace,
                         k: int = TOP_K) -> EvalReport:
    """Score a prediction set under both protocols and all subsets."""
    if len(predictions) == 0:
        raise DataError("cannot evaluate an empty prediction set")
    report = EvalReport(k=k)
    by_protocol = {"per_view": predictions, "multi_view": multiview_aggregate(predictions)}
    for kind in KINDS:
        for protocol in PROTOCOLS:
            scored = by_protocol[protocol]
            for subset in SUBSETS:
                mask = _subset_mask(scored, subset)
                if not mask.any():
                    continue
                part = scored.subset(mask)
                scores, labels, num_classes = _kind_scores(part, label_space, kind)
                recall, per_class = topk_classmean_recall(scores, labels, k, num_classes)
                present = np.flatnonzero(~np.isnan(per_class))
                report.cells[(kind, protocol, subset)] = EvalCell(
                    recall=recall, class_count=int(present.size),
                    per_class={int(c): float(per_class[c]) for c in present})
    return report


def evaluate(params, manifest: DatasetManifest, split: str, label_space: LabelSpace = None,
             k: int = TOP_K) -> EvalReport:
    """
    Evaluate the fine branch of a model on a manifest split.

    Goal heads are never consulted.
    """
    label_space = label_space or manifest.label_space
    report = evaluate_predictions(predict(params, manifest, split), label_space, k)
    logger.info("%s: action Top-%d recall %.2f (per-view) / %.2f (multi-view)", split, k,
                report.recall("action", "per_view"), report.recall("action", "multi_view"))
    return report
