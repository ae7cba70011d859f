import pytest

from anticipation.ai.ablate import (ablation_runner, run_component_ablation,
                                    run_formulation_ablation, run_lambda_sweep)
from anticipation.config import ABLATION_SEEDS, LAMBDA_SWEEP, SyntheticConfig, TrainConfig
from anticipation.dataset import generate_synthetic
from anticipation.errors import ConfigError
from anticipation.hierarchy import cooccurrence_from_manifest


@pytest.fixture
def tiny_config():
    return TrainConfig(epochs=1, batch_size=32, hidden_width=8, eval_every=1)


class TestComponentAblation:
    def test_three_rows_per_seed(self, small_dataset, small_hierarchy, tiny_config):
        result = run_component_ablation(tiny_config, small_dataset, small_hierarchy, [0, 1, 2])
        assert len(result.runs) == 9
        assert list(result.summary["variant"]) == ["fine", "fine+goal", "fine+goal+cons"]
        assert list(result.summary["runs"]) == [3, 3, 3]

    def test_repeated_seeds_are_identical(self, small_dataset, small_hierarchy, tiny_config):
        first = run_component_ablation(tiny_config, small_dataset, small_hierarchy, [7, 7, 7])
        second = run_component_ablation(tiny_config, small_dataset, small_hierarchy, [7, 7, 7])
        assert first.runs.equals(second.runs)
        for _, group in first.runs.groupby("variant"):
            assert group["recall"].nunique() == 1

    def test_needs_three_seeds(self, small_dataset, small_hierarchy, tiny_config):
        with pytest.raises(ConfigError, match="seeds"):
            run_component_ablation(tiny_config, small_dataset, small_hierarchy, [0, 1])


class TestFormulationAblation:
    def test_two_rows_per_seed(self, small_dataset, small_hierarchy, tiny_config):
        result = run_formulation_ablation(tiny_config, small_dataset, small_hierarchy, [0, 1, 2])
        assert len(result.runs) == 6
        assert list(result.summary["variant"]) == ["ground-truth-ce", "predicted-kl"]

    def test_runner_lookup(self):
        assert ablation_runner("formulation") is run_formulation_ablation
        with pytest.raises(ConfigError):
            ablation_runner("everything")


class TestLambdaSweep:
    def test_every_lambda_once_per_seed(self, small_dataset, small_hierarchy, tiny_config):
        result = run_lambda_sweep(tiny_config, small_dataset, small_hierarchy, [0.0, 0.5, 2.0], [0, 1])
        assert len(result.runs) == 6
        assert sorted(result.runs.groupby("lambda").size().tolist()) == [2, 2, 2]
        best_lambda, best_recall = result.best
        assert best_recall == result.summary["mean"].max()
        assert best_lambda in (0.0, 0.5, 2.0)

    def test_zero_lambda_matches_fine_plus_goal(self, small_dataset, small_hierarchy, tiny_config):
        sweep = run_lambda_sweep(tiny_config, small_dataset, small_hierarchy, [0.0], [0, 1, 2])
        ablation = run_component_ablation(tiny_config, small_dataset, small_hierarchy, [0, 1, 2])
        fine_goal = ablation.runs[ablation.runs["variant"] == "fine+goal"]
        assert sweep.runs["recall"].tolist() == fine_goal["recall"].tolist()

    def test_empty_lambda_values(self, small_dataset, small_hierarchy, tiny_config):
        with pytest.raises(ConfigError, match="lambda_values"):
            run_lambda_sweep(tiny_config, small_dataset, small_hierarchy, [], [0])


@pytest.fixture(scope="module")
def default_data():
    manifest, _ = generate_synthetic(SyntheticConfig())
    return manifest, cooccurrence_from_manifest(manifest)


@pytest.fixture(scope="module")
def default_components(default_data):
    manifest, hierarchy = default_data
    return run_component_ablation(TrainConfig(), manifest, hierarchy, ABLATION_SEEDS)


@pytest.mark.slow
class TestDirectionOfEffect:
    """Full-size experiments on the default synthetic dataset, five seeds each."""

    def test_each_component_helps(self, default_components):
        fine = default_components.mean("fine")
        fine_goal = default_components.mean("fine+goal")
        full = default_components.mean("fine+goal+cons")
        assert fine <= fine_goal <= full
        assert full - fine >= 1.0

    def test_both_formulations_match_or_beat_no_consistency(self, default_data,
                                                             default_components):
        manifest, hierarchy = default_data
        result = run_formulation_ablation(TrainConfig(), manifest, hierarchy, ABLATION_SEEDS)
        baseline = default_components.mean("fine+goal")
        assert result.mean("ground-truth-ce") >= baseline
        assert result.mean("predicted-kl") >= baseline

    def test_sweep_peaks_at_positive_lambda(self, default_data):
        manifest, hierarchy = default_data
        result = run_lambda_sweep(TrainConfig(), manifest, hierarchy, LAMBDA_SWEEP,
                                  ABLATION_SEEDS)
        assert sorted(result.summary["lambda"]) == sorted(LAMBDA_SWEEP)
        best_lambda, _ = result.best
        assert best_lambda > 0
