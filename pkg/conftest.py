"""Shared pytest fixtures: small label spaces, hand-built manifests and a small synthetic dataset."""

import numpy as np
import pytest

from anticipation.config import SyntheticConfig, TrainConfig
from anticipation.dataset import DatasetManifest, SegmentRecord, generate_synthetic
from anticipation.hierarchy import GoalLevel, LabelSpace, cooccurrence_from_manifest


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long experiment runs; select with -m slow")


def pytest_collection_modifyitems(config, items):
    if "slow" in (config.getoption("-m") or ""):
        return
    skip = pytest.mark.skip(reason="experiment run; use -m slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def label_space():
    """Four actions, two goals, two verbs (even/odd actions) and two nouns."""
    return LabelSpace(num_fine_actions=4, goal_levels=[GoalLevel("goal", 2)],
                      action_to_verb=[0, 1, 0, 1], action_to_noun=[0, 0, 1, 1],
                      num_verbs=2, num_nouns=2)


def make_manifest(space: LabelSpace, num_records: int, feature_dim: int = 3, snippets: int = 2,
                  train_fraction: float = 1.0, seed: int = 0) -> DatasetManifest:
    """A valid manifest with random features and labels cycling through the actions."""
    rng = np.random.default_rng(seed)
    records = []
    for i in range(num_records):
        c = i % space.num_fine_actions
        records.append(SegmentRecord(
            sequence_id=f"seq{i:05d}/t00", view_id="view0", snippet_count=snippets,
            feature_offset=i * snippets, fine_label=c,
            goal_labels=[c % space.num_goals(k) for k in range(space.num_levels)],
            verb_label=int(space.action_to_verb[c]), noun_label=int(space.action_to_noun[c])))
    num_train = int(round(train_fraction * num_records))
    splits = {"train": list(range(num_train)), "val": list(range(num_train, num_records))}
    features = rng.normal(size=(num_records * snippets, feature_dim)).astype(np.float32)
    return DatasetManifest(label_space=space, records=records, splits=splits,
                           feature_dim=feature_dim, features=features)


@pytest.fixture
def small_synthetic_config():
    return SyntheticConfig(num_goals=4, actions_per_goal=6, feature_dim=8, snippets=3,
                           num_sequences=60, views_per_sequence=2, sequence_length=5, seed=3)


@pytest.fixture
def small_dataset(small_synthetic_config):
    manifest, _ = generate_synthetic(small_synthetic_config)
    return manifest


@pytest.fixture
def small_hierarchy(small_dataset):
    return cooccurrence_from_manifest(small_dataset, "train")


@pytest.fixture
def quick_train_config():
    return TrainConfig(epochs=2, batch_size=16, hidden_width=16, eval_every=1, seed=0)


@pytest.fixture
def manifest_factory():
    return make_manifest
