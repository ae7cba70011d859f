"""
Anticipation examples, their on-disk formats, batching, and a synthetic
procedural-activity generator.

An example is an observed segment (a flat sequence of S snippet features of
dimension D) whose label is the action starting T_a seconds after the
observation ends, together with the goal(s) pursued at that time.
"""

import json
import logging
import os
import struct
from dataclasses import asdict, dataclass, field
from typing import Any, BinaryIO, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from anticipation.config import ANTICIPATION_GAP, MAX_SYNTHETIC_ACTIONS, SyntheticConfig
from anticipation.errors import ConfigError, DataError, ManifestError
from anticipation.hierarchy import GoalLevel, LabelSpace

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
FEATURE_FILE = "features.gcft"

# Feature store layout: magic, u16 version, u16 reserved, i64 rows, i64 cols, payload
STORE_MAGIC = b"GCFT"
STORE_HEADER = struct.Struct("<4sHHqq")
STORE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
FEATURE_VERSION = 1
TENSOR_VERSION = 2

SPLITS = ("train", "val")

# Observed segment V_o: S x D snippet features
FeatureSequence = np.ndarray
FeatureBatch = Union[np.ndarray, List[np.ndarray]]


@dataclass
class SegmentRecord:
    """One anticipation example; its features live in the shared feature store."""

    sequence_id: str
    view_id: str
    snippet_count: int
    feature_offset: int
    fine_label: int
    goal_labels: List[int]
    verb_label: int
    noun_label: int
    is_unseen: bool = False
    is_tail: bool = False
    anticipation_gap: float = ANTICIPATION_GAP

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SegmentRecord":
        return cls(**data)


_INT_FIELDS = ("snippet_count", "feature_offset", "fine_label", "verb_label", "noun_label")


def _is_int(value) -> bool:
    return isinstance(value, (int, np.integer)) and not isinstance(value, (bool, np.bool_))


def _check_field_types(index: int, record: SegmentRecord):
    for name in _INT_FIELDS:
        value = getattr(record, name)
        if not _is_int(value):
            raise ManifestError(f"record {index}: {name} must be an integer, got {value!r}")
    if not isinstance(record.goal_labels, (list, tuple)) or \
            not all(_is_int(g) for g in record.goal_labels):
        raise ManifestError(f"record {index}: goal_labels must be a list of integers, "
                            f"got {record.goal_labels!r}")
    if not isinstance(record.sequence_id, str) or not isinstance(record.view_id, str):
        raise ManifestError(f"record {index}: sequence_id and view_id must be strings")
    if not isinstance(record.anticipation_gap, (int, float, np.floating)) or \
            isinstance(record.anticipation_gap, bool):
        raise ManifestError(f"record {index}: anticipation_gap must be a number")


@dataclass
class LabelBatch:
    indices: np.ndarray
    fine: np.ndarray
    goals: List[np.ndarray]
    verbs: np.ndarray
    nouns: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


@dataclass
class DatasetManifest:
    """
    Label space, records, split assignment and the feature store they index.

    `features` is the loaded store (rows = snippets); it is written to its own
    file and never embedded in the JSON document.
    """

    label_space: LabelSpace
    records: List[SegmentRecord]
    splits: Dict[str, List[int]]
    feature_dim: int
    feature_file: str = FEATURE_FILE
    features: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def num_training_records(self) -> int:
        """N, the number of training examples."""
        return len(self.splits.get("train", []))

    def split_indices(self, split: str) -> np.ndarray:
        if split not in self.splits:
            raise DataError(f"unknown split '{split}' (available: {', '.join(sorted(self.splits))})")
        return np.asarray(self.splits[split], dtype=np.int64)

    def split_records(self, split: str) -> List[SegmentRecord]:
        return [self.records[i] for i in self.split_indices(split)]

    def segment(self, index: int) -> FeatureSequence:
        record = self.records[index]
        rows = self.features[record.feature_offset:record.feature_offset + record.snippet_count]
        return rows.astype(np.float64)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "label_space": self.label_space.to_dict(),
            "records": [r.to_dict() for r in self.records],
            "splits": {name: list(map(int, ids)) for name, ids in self.splits.items()},
            "feature_dim": self.feature_dim,
            "feature_file": self.feature_file,
            "num_training_records": self.num_training_records,
        }

    def validate(self):
        """Check every manifest invariant; errors name the offending record."""
        space = self.label_space
        if self.feature_dim <= 0:
            raise ManifestError("feature_dim must be positive")
        total_rows = None
        if self.features is not None:
            if self.features.ndim != 2 or self.features.shape[1] != self.feature_dim:
                raise ManifestError(f"feature store has shape {self.features.shape}, "
                                    f"expected (*, {self.feature_dim})")
            if not np.isfinite(self.features).all():
                raise ManifestError("feature store contains non-finite values")
            total_rows = self.features.shape[0]

        for i, r in enumerate(self.records):
            _check_field_types(i, r)
            if not 0 <= r.fine_label < space.num_fine_actions:
                raise ManifestError(f"record {i}: fine label {r.fine_label} out of range "
                                    f"[0, {space.num_fine_actions})")
            if len(r.goal_labels) != space.num_levels:
                raise ManifestError(f"record {i}: expected {space.num_levels} goal label(s), "
                                    f"got {len(r.goal_labels)}")
            for k, goal in enumerate(r.goal_labels):
                if not 0 <= goal < space.num_goals(k):
                    raise ManifestError(f"record {i}: goal label {goal} out of range "
                                        f"[0, {space.num_goals(k)}) at level {k}")
            if r.verb_label != space.action_to_verb[r.fine_label]:
                raise ManifestError(f"record {i}: verb label {r.verb_label} does not match "
                                    f"action {r.fine_label}")
            if r.noun_label != space.action_to_noun[r.fine_label]:
                raise ManifestError(f"record {i}: noun label {r.noun_label} does not match "
                                    f"action {r.fine_label}")
            if not r.anticipation_gap > 0:
                raise ManifestError(f"record {i}: anticipation_gap must be positive")
            if r.snippet_count < 1:
                raise ManifestError(f"record {i}: snippet_count must be >= 1")
            if r.feature_offset < 0 or (total_rows is not None
                                        and r.feature_offset + r.snippet_count > total_rows):
                raise ManifestError(f"record {i}: feature offset {r.feature_offset} + "
                                    f"{r.snippet_count} snippets outside the feature store")

        seen = set()
        for name, ids in self.splits.items():
            for idx in ids:
                if not 0 <= idx < len(self.records):
                    raise ManifestError(f"split '{name}': record index {idx} out of range")
                if idx in seen:
                    raise ManifestError(f"split '{name}': record {idx} assigned to more than one split")
                seen.add(idx)


# --- FEATURE STORE ---

def write_tensor(f: BinaryIO, array: np.ndarray, version: int = FEATURE_VERSION):
    """Write one 2-D tensor in the feature-store layout to an open binary file."""
    array = np.asarray(array)
    if array.ndim == 1:
        array = array.reshape(1, -1)
    if array.ndim != 2:
        raise DataError(f"feature store tensors must be 2-D, got shape {array.shape}")
    f.write(STORE_HEADER.pack(STORE_MAGIC, version, 0, array.shape[0], array.shape[1]))
    f.write(np.ascontiguousarray(array, dtype=STORE_DTYPES[version]).tobytes())


def read_tensor(f: BinaryIO) -> np.ndarray:
    """Read one tensor written by `write_tensor`."""
    header = f.read(STORE_HEADER.size)
    if len(header) != STORE_HEADER.size:
        raise ManifestError("truncated feature store header")
    magic, version, _reserved, rows, cols = STORE_HEADER.unpack(header)
    if magic != STORE_MAGIC:
        raise ManifestError(f"bad feature store magic {magic!r}")
    if version not in STORE_DTYPES:
        raise ManifestError(f"unsupported feature store version {version}")
    dtype = STORE_DTYPES[version]
    payload = f.read(rows * cols * dtype.itemsize)
    if len(payload) != rows * cols * dtype.itemsize:
        raise ManifestError("truncated feature store payload")
    return np.frombuffer(payload, dtype=dtype).reshape(rows, cols).astype(dtype.newbyteorder("="))


def write_feature_store(path: str, features: np.ndarray):
    with open(path, "wb") as f:
        write_tensor(f, np.asarray(features, dtype=np.float32), FEATURE_VERSION)


def read_feature_store(path: str) -> np.ndarray:
    if not os.path.exists(path):
        raise ManifestError(f"feature file not found: {path}")
    with open(path, "rb") as f:
        return read_tensor(f)


# --- MANIFEST IO ---

def write_manifest(manifest: DatasetManifest, out_dir: str):
    """Write manifest.json and the feature store into `out_dir`."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, MANIFEST_FILE), "w") as f:
        json.dump(manifest.to_dict(), f, sort_keys=True, indent=1)
        f.write("\n")
    if manifest.features is not None:
        write_feature_store(os.path.join(out_dir, manifest.feature_file), manifest.features)
    logger.info("Dataset written to %s (%d records)", out_dir, len(manifest.records))


def load_manifest(path: str) -> DatasetManifest:
    """
    Load and fully validate a manifest and the feature store it references.

    Args:
        path: manifest.json, or the directory containing it
    """
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_FILE)
    try:
        with open(path) as f:
            document = json.load(f)
    except FileNotFoundError as e:
        raise ManifestError(f"manifest not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ManifestError(f"manifest {path} is not valid JSON: {e}") from e

    try:
        label_space = LabelSpace.from_dict(document["label_space"])
        records = [SegmentRecord.from_dict(r) for r in document["records"]]
        splits = {name: list(ids) for name, ids in document["splits"].items()}
        feature_dim = int(document["feature_dim"])
        feature_file = document.get("feature_file", FEATURE_FILE)
    except (KeyError, TypeError) as e:
        raise ManifestError(f"manifest {path} is malformed: {e}") from e

    features = read_feature_store(os.path.join(os.path.dirname(path), feature_file))
    manifest = DatasetManifest(label_space=label_space, records=records, splits=splits,
                               feature_dim=feature_dim, feature_file=feature_file,
                               features=features)
    manifest.validate()
    declared = document.get("num_training_records")
    if declared is not None and declared != manifest.num_training_records:
        raise ManifestError(f"num_training_records = {declared} but the train split has "
                            f"{manifest.num_training_records} records")
    logger.info("Loaded manifest %s: %d records, N = %d", path, len(records),
                manifest.num_training_records)
    return manifest


# --- BATCHING ---

def gather_features(manifest: DatasetManifest, indices: Sequence[int]) -> FeatureBatch:
    """Stack the segments of `indices`; ragged snippet counts come back as a list."""
    segments = [manifest.segment(int(i)) for i in indices]
    if len({s.shape[0] for s in segments}) == 1:
        return np.stack(segments)
    return segments


def gather_labels(manifest: DatasetManifest, indices: Sequence[int]) -> LabelBatch:
    records = [manifest.records[int(i)] for i in indices]
    return LabelBatch(
        indices=np.asarray(indices, dtype=np.int64),
        fine=np.array([r.fine_label for r in records], dtype=np.int64),
        goals=[np.array([r.goal_labels[k] for r in records], dtype=np.int64)
               for k in range(manifest.label_space.num_levels)],
        verbs=np.array([r.verb_label for r in records], dtype=np.int64),
        nouns=np.array([r.noun_label for r in records], dtype=np.int64),
    )


def batches(manifest: DatasetManifest, split: str, batch_size: int, seed: int,
            epoch: int = 0) -> Iterator[Tuple[FeatureBatch, LabelBatch]]:
    """
    Yield one epoch of the split in a seeded order.

    The final partial batch is kept. The order depends only on (seed, epoch).
    """
    indices = manifest.split_indices(split)
    if indices.size == 0:
        raise DataError(f"split '{split}' is empty")
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    order = np.random.default_rng([seed, epoch]).permutation(indices)
    for start in range(0, len(order), batch_size):
        chunk = order[start:start + batch_size]
        yield gather_features(manifest, chunk), gather_labels(manifest, chunk)


# --- SYNTHETIC DATA ---

@dataclass
class SyntheticWorld:
    """Fixed structure behind a synthetic dataset: vocabularies, dynamics, prototypes."""

    vocabularies: List[np.ndarray]
    transitions: List[np.ndarray]
    action_prototypes: np.ndarray
    goal_prototypes: np.ndarray
    goal_to_task: np.ndarray
    unseen_goals: np.ndarray

    @property
    def num_actions(self) -> int:
        return self.action_prototypes.shape[0]


def _unit_rows(rng: np.random.Generator, rows: int, dim: int) -> np.ndarray:
    vectors = rng.standard_normal((rows, dim))
    return vectors / np.linalg.norm(vectors, axis=1, keepdims=True)


def build_world(config: SyntheticConfig) -> SyntheticWorld:
    """
    Partition actions into per-goal vocabularies and draw the fixed dynamics.

    Goal g owns a block of actions and borrows the first few actions of goal
    g + 1's block, so neighbouring goals overlap by `action_overlap_fraction`.
    """
    if config.actions_per_goal * config.num_goals > MAX_SYNTHETIC_ACTIONS:
        raise ConfigError(f"actions_per_goal: {config.actions_per_goal} x {config.num_goals} goals "
                          f"exceeds {MAX_SYNTHETIC_ACTIONS} actions")
    shared = int(round(config.action_overlap_fraction * config.actions_per_goal))
    if config.num_goals == 1:
        shared = 0
    own = config.actions_per_goal - shared
    if own < 1 or shared > own:
        raise ConfigError(f"action_overlap_fraction: {config.action_overlap_fraction} leaves "
                          f"{own} own action(s) per goal for {shared} shared")

    world_seed, _ = np.random.SeedSequence(config.seed).spawn(2)
    rng = np.random.default_rng(world_seed)

    blocks = [np.arange(g * own, (g + 1) * own) for g in range(config.num_goals)]
    vocabularies = [np.concatenate([blocks[g], blocks[(g + 1) % config.num_goals][:shared]])
                    for g in range(config.num_goals)]
    transitions = [rng.dirichlet(np.full(len(v), config.transition_concentration), size=len(v))
                   for v in vocabularies]

    num_actions = config.num_goals * own
    action_prototypes = _unit_rows(rng, num_actions, config.feature_dim)
    goal_prototypes = _unit_rows(rng, config.num_goals, config.feature_dim)

    if config.num_tasks:
        goal_to_task = np.arange(config.num_goals) * config.num_tasks // config.num_goals
    else:
        goal_to_task = np.zeros(config.num_goals, dtype=np.int64)

    num_unseen = min(int(round(config.unseen_goal_fraction * config.num_goals)),
                     config.num_goals - 1)
    unseen_goals = np.sort(rng.permutation(config.num_goals)[:num_unseen])

    return SyntheticWorld(vocabularies=vocabularies, transitions=transitions,
                          action_prototypes=action_prototypes, goal_prototypes=goal_prototypes,
                          goal_to_task=goal_to_task.astype(np.int64), unseen_goals=unseen_goals)


def synthetic_label_space(config: SyntheticConfig, num_actions: int) -> LabelSpace:
    levels = [GoalLevel("goal", config.num_goals)]
    if config.num_tasks:
        levels.append(GoalLevel("task", config.num_tasks))
    actions = np.arange(num_actions)
    return LabelSpace(num_fine_actions=num_actions, goal_levels=levels,
                      action_to_verb=actions % config.num_verbs,
                      action_to_noun=actions // config.num_verbs,
                      num_verbs=config.num_verbs,
                      num_nouns=-(-num_actions // config.num_verbs))


def generate_synthetic(config: SyntheticConfig) -> Tuple[DatasetManifest, np.ndarray]:
    """
    Generate a synthetic procedural-activity dataset.

    Every sequence pursues one goal and walks a Markov chain over that goal's
    vocabulary. Each step t yields one example per view: the observed snippets
    mix the current action and goal prototypes with the prototype of the next
    action, and the label is the next action.

    Returns:
        (manifest, feature store); the manifest references the same store
    """
    world = build_world(config)
    space = synthetic_label_space(config, world.num_actions)
    _, sample_seed = np.random.SeedSequence(config.seed).spawn(2)
    rng = np.random.default_rng(sample_seed)
    unseen = set(world.unseen_goals.tolist())

    contexts, nexts, goals, seq_ids, steps, in_val = [], [], [], [], [], []
    for i in range(config.num_sequences):
        goal = int(rng.integers(config.num_goals))
        vocab = world.vocabularies[goal]
        state = int(rng.integers(len(vocab)))
        chain = [state]
        for _ in range(config.sequence_length - 1):
            state = int(rng.choice(len(vocab), p=world.transitions[goal][state]))
            chain.append(state)
        held_out = goal in unseen
        is_val = held_out or bool(rng.random() < config.val_fraction)
        for t in range(config.sequence_length - 1):
            contexts.append(vocab[chain[t]])
            nexts.append(vocab[chain[t + 1]])
            goals.append(goal)
            seq_ids.append(i)
            steps.append(t)
            in_val.append(is_val)

    contexts = np.asarray(contexts, dtype=np.int64)
    nexts = np.asarray(nexts, dtype=np.int64)
    goals = np.asarray(goals, dtype=np.int64)
    num_examples = len(nexts)
    views, snippets = config.views_per_sequence, config.snippets

    signal = config.signal_mix * (world.action_prototypes[contexts]
                                  + 0.5 * world.goal_prototypes[goals])
    signal = signal + (1.0 - config.signal_mix) * world.action_prototypes[nexts]
    noise = config.noise_sigma * rng.standard_normal((num_examples, views, snippets,
                                                       config.feature_dim))
    features = (signal[:, None, None, :] + noise).astype(np.float32)
    features = features.reshape(-1, config.feature_dim)

    train_mask = ~np.asarray(in_val)
    train_counts = np.bincount(nexts[train_mask], minlength=world.num_actions) * views
    tail_actions = train_counts <= np.quantile(train_counts, 0.2)

    records, splits = [], {"train": [], "val": []}
    for e in range(num_examples):
        c, g = int(nexts[e]), int(goals[e])
        goal_labels = [g] + ([int(world.goal_to_task[g])] if config.num_tasks else [])
        for v in range(views):
            splits["val" if in_val[e] else "train"].append(len(records))
            records.append(SegmentRecord(
                sequence_id=f"seq{seq_ids[e]:05d}/t{steps[e]:02d}",
                view_id=f"view{v}",
                snippet_count=snippets,
                feature_offset=(e * views + v) * snippets,
                fine_label=c,
                goal_labels=goal_labels,
                verb_label=int(space.action_to_verb[c]),
                noun_label=int(space.action_to_noun[c]),
                is_unseen=g in unseen,
                is_tail=bool(tail_actions[c]),
                anticipation_gap=ANTICIPATION_GAP,
            ))

    manifest = DatasetManifest(label_space=space, records=records, splits=splits,
                               feature_dim=config.feature_dim, features=features)
    manifest.validate()
    logger.info("Generated %d records (%d train / %d val) over %d actions and %d goals",
                len(records), len(splits["train"]), len(splits["val"]),
                world.num_actions, config.num_goals)
    return manifest, features
