"""Tests for supervised training and the five pipeline steps on synthetic blobs."""
import itertools

import numpy as np
import pytest
from conftest import blob_settings

from dglego.data.loaders import load_split
from dglego.data.splits import DataSplit
from dglego.data.synthetic import linear_gp_targets
from dglego.exceptions import ConfigError, DivergenceError
from dglego.experiments.metrics import read_summary
from dglego.experiments.pipeline import (
    default_kernel_specs,
    fit_kernel_params,
    initial_stack,
    pipeline,
    run_e2e,
    run_lego,
    run_monitor,
    run_random_baseline,
    write_step,
)
from dglego.gp.dgl_loss import dgl
from dglego.models.data import LabeledActivations
from dglego.models.experiment import ExperimentConfig
from dglego.nn.checkpoint import load_stack
from dglego.nn.layers import Layer, LayerActivation, LayerStack, representation
from dglego.utils.persistence import load_kernel_specs


def _config(tmp_path, **sections):
    return ExperimentConfig.model_validate(blob_settings(tmp_path / "runs", **sections))


def test_zero_learning_rate_gives_flat_curves_and_stops_early(tmp_path):
    config = _config(tmp_path, e2e={"optimizer": {"kind": "sgd", "lr": 0.0}, "patience": 5})
    result = run_e2e(config)
    mse = result.record.series("train", "mse")
    assert np.all(mse.to_numpy() == mse.iloc[0])
    assert result.record.metadata["stopped_early"]
    assert result.record.metadata["best_epoch"] == 0
    assert result.record.metadata["epochs_run"] == 5
    assert result.stack.checksums() == initial_stack(config, load_split(config.dataset, config.seed)).checksums()


def test_adam_fits_separable_blobs(tmp_path):
    config = _config(tmp_path, dataset={"noise": 0.1}, e2e={"epochs": 200, "patience": 200})
    result = run_e2e(config)
    assert result.record.last("train", "best_accuracy") == 1.0
    assert result.record.last("test", "best_accuracy") >= 0.9


def test_grid_search_selects_on_validation_loss(tmp_path):
    config = _config(tmp_path, e2e={"grid_search": True, "lr_grid": [0.0, 0.01], "wd_grid": [0.0]})
    metadata = run_e2e(config).record.metadata
    assert len(metadata["lr_wd_grid"]) == 2
    assert metadata["optimizer"]["lr"] == 0.01


def test_divergence_carries_the_partial_record(tmp_path):
    config = _config(tmp_path, e2e={"optimizer": {"kind": "sgd", "lr": 1e10}})
    with np.errstate(all="ignore"), pytest.raises(DivergenceError) as excinfo:
        run_e2e(config)
    assert excinfo.value.record is not None
    assert excinfo.value.record.rows


def test_monitoring_does_not_change_the_trajectory(blob_config):
    e2e = run_e2e(blob_config)
    monitored = run_monitor(blob_config, default_kernel_specs(blob_config))
    assert monitored.record.metadata["loss"] == e2e.record.metadata["loss"] == "mse"
    assert monitored.record.metadata["layer_checksums"] == e2e.record.metadata["layer_checksums"]
    for layer in range(blob_config.model.depth):
        series = monitored.record.series("train", "dgl", layer)
        assert list(series.index) == list(range(21))
        assert np.all(np.isfinite(series.to_numpy()))
    assert set(monitored.record.metadata["dgl_loss_spearman"]) == {0, 1}


def test_nll_training_is_monitored_against_cross_entropy(tmp_path):
    config = _config(tmp_path, e2e={"loss": "nll"})
    e2e = run_e2e(config)
    assert e2e.record.metadata["loss"] == "nll"
    nll = e2e.record.series("train", "nll")
    assert list(nll.index) == list(range(21))
    assert nll.iloc[-1] < nll.iloc[0]
    assert e2e.record.last("test", "best_nll") is not None
    summary = read_summary(write_step(config, tmp_path / "nll", e2e)["summary"])
    assert summary["metadata"]["loss"] == "nll"
    monitored = run_monitor(config, default_kernel_specs(config))
    assert monitored.record.metadata["loss"] == "nll"
    assert monitored.record.metadata["layer_checksums"] == e2e.record.metadata["layer_checksums"]
    assert set(monitored.record.metadata["dgl_loss_spearman"]) == {0, 1}


def test_monitor_cadence_longer_than_training(tmp_path):
    config = _config(tmp_path, monitor={"every": 100})
    record = run_monitor(config, default_kernel_specs(config)).record
    assert list(record.series("train", "dgl", 0).index) == [0, 20]
    assert record.metadata["dgl_loss_spearman"][0] is None


def test_monitor_rejects_wrong_spec_count(blob_config):
    with pytest.raises(ConfigError):
        run_monitor(blob_config, default_kernel_specs(blob_config)[:1])


def test_fit_kernel_keeps_the_grid_minimum(blob_config):
    split = load_split(blob_config.dataset, blob_config.seed)
    stack = run_e2e(blob_config, split).stack
    result = fit_kernel_params(blob_config, stack, split)
    assert [spec.depth for spec in result.kernel_specs] == [1, 0]
    grid = blob_config.kernel_grid
    for layer, chosen in enumerate(result.kernel_specs):
        data = split.val.with_activations(representation(stack, split.val.H, layer))
        cells = itertools.product(grid.sigma_w2, grid.sigma_b2)
        values = [dgl(blob_config.top_spec(layer, w, b), data).loss for w, b in cells]
        assert dgl(chosen, data).loss == pytest.approx(min(values), rel=1e-12)
        assert result.record.last("val", "dgl", layer) == pytest.approx(min(values), rel=1e-12)
    assert len(result.record.metadata["kernel_grid"]) == 2 * 4


def test_fit_kernel_recovers_the_generating_prior_variance(tmp_path):
    """Targets drawn from a linear GP with sigma_w2 = 2 select a neighbouring grid cell."""
    n, dim, noise = 40, 40, 1.0
    X, targets = linear_gp_targets(n, dim, n_outputs=200, sigma_w2=2.0, noise=noise, rng=np.random.default_rng(5))
    data = LabeledActivations(X, targets, np.zeros(n, dtype=int))
    indices = np.arange(n)
    split = DataSplit(data, data, data, indices, indices, indices, class_ids=(0,))
    stack = LayerStack(
        [
            Layer(np.eye(dim), np.zeros(dim), LayerActivation.IDENTITY),
            Layer(np.zeros((2, dim)), np.zeros(2), LayerActivation.IDENTITY),
        ]
    )
    grid = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0]
    config = _config(
        tmp_path,
        model={"depth": 1, "width": dim},
        dgl={"jitter": noise**2},
        kernel_grid={"sigma_w2": grid, "sigma_b2": [0.0]},
    )
    (chosen,) = fit_kernel_params(config, stack, split).kernel_specs
    assert chosen.depth == 0 and chosen.jitter == noise**2
    assert abs(grid.index(chosen.sigma_w2) - grid.index(2.0)) <= 1


def test_lego_freezes_each_layer_and_is_deterministic(blob_config):
    first = run_lego(blob_config)
    second = run_lego(blob_config)
    metadata = first.record.metadata
    assert metadata["freeze_audit_passed"]
    for layer, checksum in metadata["frozen_checksums"].items():
        assert first.stack.checksums()[layer] == checksum
    assert metadata["layer_checksums"] == second.record.metadata["layer_checksums"]
    assert all(first.stack.layers[layer].frozen for layer in range(blob_config.model.depth))
    for layer in range(blob_config.model.depth):
        assert len(first.record.series("val", "dgl", layer)) >= 1
    assert first.record.last("test", "best_accuracy") is not None


def test_lego_rejects_wrong_spec_count(blob_config):
    with pytest.raises(ConfigError):
        run_lego(blob_config, default_kernel_specs(blob_config) * 2)


def test_random_baseline_trains_only_the_classifier(blob_config):
    split = load_split(blob_config.dataset, blob_config.seed)
    before = initial_stack(blob_config, split).checksums()
    result = run_random_baseline(blob_config, split)
    after = result.stack.checksums()
    assert after[:-1] == before[:-1]
    assert after[-1] != before[-1]
    assert result.record.metadata["freeze_audit_passed"]


def test_pipeline_writes_every_step(blob_config, tmp_path):
    run_dir = tmp_path / "pipeline"
    results = pipeline(blob_config, run_dir)
    assert list(results) == ["e2e", "fit-kernel", "monitor", "lego", "random-baseline"]
    for step in results:
        for name in ("metrics.csv", "summary.json", "config.resolved.yaml"):
            assert (run_dir / step / name).exists()
    specs = load_kernel_specs(run_dir / "fit-kernel" / "kernel_specs.json")
    assert specs == results["fit-kernel"].kernel_specs
    restored = load_stack(run_dir / "e2e" / "stack.bin")
    assert restored.checksums() == results["e2e"].stack.checksums()


def test_write_step_without_stack(blob_config, tmp_path):
    result = run_e2e(blob_config)
    result.stack = None
    paths = write_step(blob_config, tmp_path / "step", result)
    assert set(paths) == {"metrics", "summary", "config"}


@pytest.mark.slow
def test_lego_matches_end_to_end_accuracy_on_blobs(tmp_path):
    """Both trained networks beat the frozen random features and agree within two points."""
    config = _config(
        tmp_path,
        dataset={"train_size": 400, "val_size": 400, "test_size": 400, "n_features": 48, "noise": 1.7},
        e2e={"epochs": 200, "patience": 200},
        lego={"epochs_per_layer": 40, "classifier_epochs": 200, "patience": 40},
        dgl={"minibatch": 50},
    )
    results = pipeline(config, tmp_path / "pipeline")
    accuracy = {step: results[step].record.last("test", "best_accuracy") for step in ("e2e", "lego", "random-baseline")}
    assert results["lego"].record.metadata["freeze_audit_passed"]
    assert abs(accuracy["lego"] - accuracy["e2e"]) <= 0.02
    assert accuracy["e2e"] > accuracy["random-baseline"]
    assert accuracy["lego"] > accuracy["random-baseline"]
