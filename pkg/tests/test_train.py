import math
from dataclasses import replace

import numpy as np
import pytest
import torch
from numpy.testing import assert_array_equal

from anticipation.ai.model import init_params
from anticipation.ai.train import Trainer, check_hierarchy, train
from anticipation.config import LossConfig, TrainConfig
from anticipation.errors import ConfigError, DataError
from anticipation.hierarchy import derive_conditional


def reference_adam(theta, grad_fn, steps, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Scalar Adam written out step by step."""
    m = v = 0.0
    for t in range(1, steps + 1):
        g = grad_fn(theta)
        m = m + (g - m) * (1 - beta1)
        v = beta2 * v + (1 - beta2) * g * g
        step_size = lr / (1 - beta1 ** t)
        denom = math.sqrt(v) / math.sqrt(1 - beta2 ** t) + eps
        theta = theta - step_size * m / denom
    return theta


class TestOptimizer:
    def test_adam_matches_scalar_reference(self):
        def grad(p):
            return 2.0 * (p - 3.0)

        param = np.array([0.5])
        tensor = torch.from_numpy(param).requires_grad_(True)
        optimizer = torch.optim.Adam([tensor], lr=1e-3, betas=(0.9, 0.999), eps=1e-8)
        for _ in range(100):
            tensor.grad = torch.from_numpy(np.array([grad(param[0])]))
            optimizer.step()
        assert abs(param[0] - reference_adam(0.5, grad, 100)) < 1e-12

    def test_trainer_updates_shared_parameters(self, small_dataset, small_hierarchy,
                                               quick_train_config):
        trainer = Trainer(quick_train_config, small_dataset, small_hierarchy)
        before = trainer.params.copy()
        trainer.train_epoch(0)
        assert not np.array_equal(before.fine_head_w, trainer.params.fine_head_w)
        assert_array_equal(trainer.tensors[2].detach().numpy(), trainer.params.fine_head_w)


class TestTrain:
    def test_zero_epochs_keeps_initial_params(self, small_dataset, small_hierarchy,
                                              quick_train_config):
        config = replace(quick_train_config, epochs=0)
        params, history = train(config, small_dataset, small_hierarchy)
        initial = init_params(small_dataset.label_space, small_dataset.feature_dim,
                              config.hidden_width, config.seed)
        for (_, a), (_, b) in zip(params.named_tensors(), initial.named_tensors()):
            assert_array_equal(a, b)
        assert history.epochs == []
        assert history.final_eval is not None

    def test_deterministic(self, small_dataset, small_hierarchy, quick_train_config):
        first, history_a = train(quick_train_config, small_dataset, small_hierarchy)
        second, history_b = train(quick_train_config, small_dataset, small_hierarchy)
        for (_, a), (_, b) in zip(first.named_tensors(), second.named_tensors()):
            assert_array_equal(a, b)
        assert history_a.rows() == history_b.rows()

    def test_loss_decreases(self, small_dataset, small_hierarchy):
        config = TrainConfig(epochs=10, batch_size=16, hidden_width=16, eval_every=5,
                             learning_rate=0.01)
        _, history = train(config, small_dataset, small_hierarchy)
        assert history.epochs[-1]["total"] < history.epochs[0]["total"]

    def test_history_rows(self, small_dataset, small_hierarchy, quick_train_config):
        _, history = train(quick_train_config, small_dataset, small_hierarchy)
        rows = history.rows()
        assert [row["epoch"] for row in rows] == [1, 2]
        for row in rows:
            assert {"fine_ce", "goal_ce_0", "consistency_0", "total"} <= set(row)
            assert {"fine_ce_sum", "goal_ce_0_sum", "consistency_0_sum", "total_sum"} <= set(row)
            assert "action/per_view/overall" in row
        assert [epoch for epoch, _ in history.evals] == [1, 2]

    def test_evaluation_schedule(self, small_dataset, small_hierarchy):
        config = TrainConfig(epochs=7, batch_size=32, hidden_width=8, eval_every=3)
        _, history = train(config, small_dataset, small_hierarchy)
        assert [epoch for epoch, _ in history.evals] == [3, 6, 7]

    def test_fine_only_needs_no_hierarchy(self, small_dataset, quick_train_config):
        config = replace(quick_train_config,
                         loss=LossConfig(use_goal_loss=False, use_consistency=False))
        _, history = train(config, small_dataset)
        assert history.epochs[0]["consistency_0"] == 0.0

    def test_consistency_without_hierarchy(self, small_dataset, quick_train_config):
        with pytest.raises(ConfigError, match="co-occurrence"):
            train(quick_train_config, small_dataset, [])


class TestLeakageGuard:
    def test_validation_counts_rejected(self, small_dataset, small_hierarchy):
        counts = small_hierarchy[0].counts.copy()
        counts[0, 0] += 1
        with pytest.raises(DataError, match="training split"):
            check_hierarchy(small_dataset, [derive_conditional(counts)])

    def test_shape_mismatch(self, small_dataset, small_hierarchy):
        counts = small_hierarchy[0].counts[:, :-1]
        with pytest.raises(DataError, match="shape"):
            check_hierarchy(small_dataset, [derive_conditional(counts)])

    def test_level_count(self, small_dataset, small_hierarchy):
        with pytest.raises(DataError, match="goal level"):
            check_hierarchy(small_dataset, small_hierarchy * 2)


class TestConfig:
    def test_nested_loss_from_dict(self):
        config = TrainConfig.from_dict({"epochs": 3, "loss": {"lambda_cons": 2.5}})
        assert config.loss.lambda_cons == 2.5
        assert config.to_dict()["loss"]["lambda_cons"] == 2.5

    def test_unknown_loss_field(self):
        with pytest.raises(ConfigError, match="loss.lambda"):
            TrainConfig.from_dict({"loss": {"lambda": 1.0}})

    def test_invalid_batch_size(self):
        with pytest.raises(ConfigError, match="batch_size"):
            TrainConfig(batch_size=0)
