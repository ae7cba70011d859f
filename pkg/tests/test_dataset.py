import io
import os

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from anticipation.config import SyntheticConfig
from anticipation.dataset import (FEATURE_FILE, MANIFEST_FILE, STORE_HEADER, TENSOR_VERSION,
                                  batches, build_world, generate_synthetic, load_manifest,
                                  read_tensor, write_manifest, write_tensor)
from anticipation.errors import ConfigError, ManifestError


def entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


class TestFeatureStore:
    def test_header_layout(self):
        buffer = io.BytesIO()
        write_tensor(buffer, np.ones((3, 2), dtype=np.float32))
        raw = buffer.getvalue()
        assert raw[:4] == b"GCFT"
        assert len(raw) == STORE_HEADER.size + 3 * 2 * 4

    def test_float64_tensor(self):
        buffer = io.BytesIO()
        values = np.random.default_rng(0).normal(size=(2, 5))
        write_tensor(buffer, values, TENSOR_VERSION)
        buffer.seek(0)
        assert_array_equal(read_tensor(buffer), values)

    def test_truncated_payload(self):
        buffer = io.BytesIO()
        write_tensor(buffer, np.ones((4, 4), dtype=np.float32))
        with pytest.raises(ManifestError, match="truncated"):
            read_tensor(io.BytesIO(buffer.getvalue()[:-3]))


class TestManifest:
    def test_round_trip(self, tmp_path, label_space, manifest_factory):
        manifest = manifest_factory(label_space, 2)
        write_manifest(manifest, str(tmp_path))
        loaded = load_manifest(str(tmp_path))
        assert loaded.num_training_records == 2
        assert loaded.records == manifest.records
        assert_array_equal(loaded.features, manifest.features)
        assert loaded.label_space.fingerprint() == label_space.fingerprint()

    def test_goal_out_of_range_names_record(self, label_space, manifest_factory):
        manifest = manifest_factory(label_space, 2)
        manifest.records[0].goal_labels = [2]
        with pytest.raises(ManifestError, match="record 0"):
            manifest.validate()

    @pytest.mark.parametrize("field, value", [("goal_labels", 0), ("goal_labels", ["1"]),
                                              ("fine_label", "2"), ("fine_label", 1.0),
                                              ("snippet_count", None)])
    def test_wrong_field_type_names_record(self, label_space, manifest_factory, field, value):
        manifest = manifest_factory(label_space, 3)
        setattr(manifest.records[1], field, value)
        with pytest.raises(ManifestError, match=f"record 1: {field}"):
            manifest.validate()

    def test_verb_must_follow_action(self, label_space, manifest_factory):
        manifest = manifest_factory(label_space, 2)
        manifest.records[1].verb_label = 0
        with pytest.raises(ManifestError, match="record 1"):
            manifest.validate()

    def test_record_in_two_splits(self, label_space, manifest_factory):
        manifest = manifest_factory(label_space, 4)
        manifest.splits["val"] = [0]
        with pytest.raises(ManifestError, match="more than one split"):
            manifest.validate()

    def test_missing_feature_file(self, tmp_path, label_space, manifest_factory):
        write_manifest(manifest_factory(label_space, 2), str(tmp_path))
        os.remove(tmp_path / FEATURE_FILE)
        with pytest.raises(ManifestError, match="not found"):
            load_manifest(str(tmp_path / MANIFEST_FILE))


class TestBatches:
    def test_partial_final_batch(self, label_space, manifest_factory):
        manifest = manifest_factory(label_space, 130)
        sizes = [len(labels) for _, labels in batches(manifest, "train", 64, seed=0)]
        assert sizes == [64, 64, 2]

    def test_same_seed_same_order(self, label_space, manifest_factory):
        manifest = manifest_factory(label_space, 50)
        first = [labels.indices for _, labels in batches(manifest, "train", 8, seed=5, epoch=2)]
        second = [labels.indices for _, labels in batches(manifest, "train", 8, seed=5, epoch=2)]
        for a, b in zip(first, second):
            assert_array_equal(a, b)

    def test_epochs_reshuffle(self, label_space, manifest_factory):
        manifest = manifest_factory(label_space, 50)
        first = np.concatenate([l.indices for _, l in batches(manifest, "train", 50, seed=5, epoch=0)])
        second = np.concatenate([l.indices for _, l in batches(manifest, "train", 50, seed=5, epoch=1)])
        assert not np.array_equal(first, second)

    def test_epoch_covers_split_once(self, label_space, manifest_factory):
        manifest = manifest_factory(label_space, 37, train_fraction=0.7)
        seen = np.concatenate([l.indices for _, l in batches(manifest, "train", 5, seed=1)])
        assert sorted(seen.tolist()) == manifest.splits["train"]

    def test_features_match_labels(self, label_space, manifest_factory):
        manifest = manifest_factory(label_space, 9)
        for features, labels in batches(manifest, "train", 4, seed=0):
            assert features.shape == (len(labels), 2, 3)
            for row, index in zip(features, labels.indices):
                assert_array_equal(row, manifest.segment(int(index)))


class TestSyntheticGenerator:
    def test_noiseless_features_identify_the_next_action(self):
        config = SyntheticConfig(noise_sigma=0.0, signal_mix=0.0, num_sequences=40)
        manifest, features = generate_synthetic(config)
        prototypes = build_world(config).action_prototypes
        for i, record in enumerate(manifest.records):
            segment = manifest.segment(i)
            assert np.argmax(segment[0] @ prototypes.T) == record.fine_label

    def test_same_seed_bitwise_identical(self, small_synthetic_config):
        first, features_a = generate_synthetic(small_synthetic_config)
        second, features_b = generate_synthetic(small_synthetic_config)
        assert first.to_dict() == second.to_dict()
        assert features_a.tobytes() == features_b.tobytes()

    def test_different_seed_differs(self, small_synthetic_config):
        _, features_a = generate_synthetic(small_synthetic_config)
        other = SyntheticConfig(**{**small_synthetic_config.to_dict(), "seed": 4})
        _, features_b = generate_synthetic(other)
        assert features_a.tobytes() != features_b.tobytes()

    def test_goal_reduces_action_entropy(self):
        manifest, _ = generate_synthetic(SyntheticConfig())
        space = manifest.label_space
        counts = np.zeros((space.num_goals(0), space.num_fine_actions))
        for record in manifest.records:
            counts[record.goal_labels[0], record.fine_label] += 1
        marginal = entropy(counts.sum(axis=0))
        conditional = sum(counts[g].sum() / counts.sum() * entropy(counts[g])
                          for g in range(counts.shape[0]) if counts[g].sum() > 0)
        assert conditional < marginal

    def test_views_share_sequence_and_labels(self, small_dataset):
        by_sequence = {}
        for record in small_dataset.records:
            by_sequence.setdefault(record.sequence_id, []).append(record)
        for views in by_sequence.values():
            assert len(views) == 2
            assert len({(v.fine_label, tuple(v.goal_labels)) for v in views}) == 1
            assert len({v.view_id for v in views}) == 2

    def test_unseen_goals_only_in_validation(self, small_dataset):
        train = set(small_dataset.splits["train"])
        unseen = [i for i, r in enumerate(small_dataset.records) if r.is_unseen]
        assert unseen
        assert not train.intersection(unseen)

    def test_task_level(self):
        config = SyntheticConfig(num_goals=4, num_tasks=2, num_sequences=20, feature_dim=4)
        manifest, _ = generate_synthetic(config)
        assert manifest.label_space.num_levels == 2
        for record in manifest.records:
            assert record.goal_labels[1] == record.goal_labels[0] * 2 // 4

    def test_too_many_actions(self):
        with pytest.raises(ConfigError, match="actions_per_goal"):
            build_world(SyntheticConfig(num_goals=100, actions_per_goal=50))

    def test_invalid_field(self):
        with pytest.raises(ConfigError, match="noise_sigma"):
            SyntheticConfig(noise_sigma=-1.0)

    def test_unknown_field(self):
        with pytest.raises(ConfigError, match="synthetic.colour"):
            SyntheticConfig.from_dict({"colour": 1})
