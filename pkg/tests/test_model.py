import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from anticipation.ai.model import (ModelParams, backward, count_params, forward, init_params,
                                   load_checkpoint, save_checkpoint)
from anticipation.errors import DataError
from anticipation.gradcheck import check_model_backward
from anticipation.hierarchy import GoalLevel, LabelSpace


def space_with(num_actions: int, goals=(3,)) -> LabelSpace:
    return LabelSpace(num_fine_actions=num_actions,
                      goal_levels=[GoalLevel(f"level{k}", n) for k, n in enumerate(goals)],
                      action_to_verb=np.zeros(num_actions, dtype=int),
                      action_to_noun=np.arange(num_actions), num_verbs=1, num_nouns=num_actions)


def naive_forward(params: ModelParams, segment: np.ndarray):
    """Loop-by-loop evaluation of the trunk and heads for one segment."""
    snippets, dim = segment.shape
    pooled = [sum(segment[s, d] for s in range(snippets)) / snippets for d in range(dim)]
    hidden = []
    for h in range(params.hidden_width):
        pre = params.trunk_b[h] + sum(pooled[d] * params.trunk_w[d, h] for d in range(dim))
        hidden.append(max(pre, 0.0))

    def head(w, b):
        return [b[j] + sum(hidden[h] * w[h, j] for h in range(len(hidden))) for j in range(w.shape[1])]

    return head(params.fine_head_w, params.fine_head_b), [head(w, b) for w, b in params.goal_heads]


class TestInitParams:
    def test_same_seed_identical(self):
        a = init_params(space_with(6), 5, 4, seed=11)
        b = init_params(space_with(6), 5, 4, seed=11)
        for (_, x), (_, y) in zip(a.named_tensors(), b.named_tensors()):
            assert_array_equal(x, y)

    def test_different_seeds_differ(self):
        a = init_params(space_with(6), 5, 4, seed=1)
        b = init_params(space_with(6), 5, 4, seed=2)
        assert not np.array_equal(a.trunk_w, b.trunk_w)

    def test_glorot_bound(self):
        params = init_params(space_with(48), 32, 16, seed=0)
        assert params.fine_head_w.shape == (16, 48)
        assert np.abs(params.fine_head_w).max() <= np.sqrt(6 / 64)
        assert_array_equal(params.fine_head_b, 0.0)

    def test_count_params(self):
        params = init_params(space_with(10, goals=(3, 2)), 8, 4, seed=0)
        counts = count_params(params)
        assert counts["trunk"] == 8 * 4 + 4
        assert counts["fine_head"] == 4 * 10 + 10
        assert counts["goal_heads"] == (4 * 3 + 3) + (4 * 2 + 2)
        assert counts["total"] == sum(counts[k] for k in ("trunk", "fine_head", "goal_heads"))


class TestForward:
    def test_zero_features_zero_logits(self):
        params = init_params(space_with(5), 4, 6, seed=0)
        out = forward(params, np.zeros((3, 4)))
        assert_array_equal(out.fine_logits, 0.0)
        assert_array_equal(out.goal_logits[0], 0.0)

    def test_duplicated_snippets(self):
        rng = np.random.default_rng(2)
        params = init_params(space_with(5), 4, 6, seed=0)
        segment = rng.normal(size=(3, 4))
        out = forward(params, segment)
        doubled = forward(params, np.repeat(segment, 2, axis=0))
        assert_allclose(doubled.fine_logits, out.fine_logits, atol=1e-12)

    def test_matches_naive_evaluation(self):
        rng = np.random.default_rng(3)
        params = init_params(space_with(7, goals=(3, 2)), 5, 6, seed=4)
        params.trunk_b = rng.normal(size=6)
        params.fine_head_b = rng.normal(size=7)
        segment = rng.normal(size=(4, 5))
        out = forward(params, segment)
        fine, goals = naive_forward(params, segment)
        assert_allclose(out.fine_logits, fine, atol=1e-12)
        for logits, expected in zip(out.goal_logits, goals):
            assert_allclose(logits, expected, atol=1e-12)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(5)
        params = init_params(space_with(5), 4, 6, seed=0)
        batch = rng.normal(size=(3, 2, 4))
        out = forward(params, batch)
        for i in range(3):
            assert_allclose(out.fine_logits[i], forward(params, batch[i]).fine_logits, atol=1e-12)

    def test_ragged_list(self):
        rng = np.random.default_rng(6)
        params = init_params(space_with(5), 4, 6, seed=0)
        segments = [rng.normal(size=(2, 4)), rng.normal(size=(5, 4))]
        out = forward(params, segments)
        assert out.fine_logits.shape == (2, 5)
        assert_allclose(out.fine_logits[1], forward(params, segments[1]).fine_logits, atol=1e-12)

    def test_wrong_feature_dim(self):
        params = init_params(space_with(5), 4, 6, seed=0)
        with pytest.raises(DataError, match="dimension"):
            forward(params, np.zeros((2, 3)))


class TestBackward:
    def test_zero_upstream(self):
        rng = np.random.default_rng(0)
        params = init_params(space_with(5), 4, 6, seed=0)
        features = rng.normal(size=(2, 3, 4))
        out = forward(params, features)
        grads = backward(params, features, out, np.zeros((2, 5)), [np.zeros((2, 3))])
        for _, tensor in grads.named_tensors():
            assert_array_equal(tensor, 0.0)

    def test_fine_bias_gradient(self):
        rng = np.random.default_rng(1)
        params = init_params(space_with(5), 4, 6, seed=0)
        segment = rng.normal(size=(3, 4))
        upstream = rng.normal(size=5)
        grads = backward(params, segment, forward(params, segment), upstream, [np.zeros(3)])
        assert_array_equal(grads.fine_head_b, upstream)

    def test_finite_differences(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            assert check_model_backward(rng) < 1e-4

    def test_gradient_shape_mismatch(self):
        params = init_params(space_with(5), 4, 6, seed=0)
        segment = np.ones((2, 4))
        with pytest.raises(DataError):
            backward(params, segment, forward(params, segment), np.zeros(4), [np.zeros(3)])


class TestCheckpoint:
    def test_round_trip_is_exact(self, tmp_path):
        space = space_with(6, goals=(3, 2))
        params = init_params(space, 5, 4, seed=9)
        params.trunk_b = np.random.default_rng(0).normal(size=4)
        path = str(tmp_path / "checkpoint.bin")
        save_checkpoint(params, path, space, seed=9)
        loaded, header = load_checkpoint(path, space)
        assert header["seed"] == 9
        assert header["goal_levels"] == [3, 2]
        for (name, x), (_, y) in zip(params.named_tensors(), loaded.named_tensors()):
            assert x.shape == y.shape, name
            assert_array_equal(x, y)

    def test_label_space_mismatch(self, tmp_path):
        path = str(tmp_path / "checkpoint.bin")
        save_checkpoint(init_params(space_with(6), 5, 4, seed=0), path, space_with(6), seed=0)
        with pytest.raises(DataError, match="different label space"):
            load_checkpoint(path, space_with(6, goals=(4,)))

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b'{"format": "something-else"}\n')
        with pytest.raises(DataError, match="not a model checkpoint"):
            load_checkpoint(str(path))
