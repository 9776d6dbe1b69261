"""Shared fixtures for the dglego test suite."""
import numpy as np
import pytest

from dglego.models.data import LabeledActivations
from dglego.models.experiment import ExperimentConfig


@pytest.fixture
def rng():
    """Seeded generator so every test is reproducible."""
    return np.random.default_rng(1234)


@pytest.fixture
def small_data(rng):
    """Twelve 3-d activations with balanced binary labels."""
    labels = np.arange(12) % 2
    return LabeledActivations.from_labels(rng.standard_normal((12, 3)), labels)


def blob_settings(output_dir, **sections):
    """Config dict for a fast run on the synthetic blob dataset."""
    settings = {
        "run_name": "blobs",
        "seed": 7,
        "output_dir": str(output_dir),
        "dataset": {
            "name": "synthetic_blobs",
            "train_size": 40,
            "val_size": 40,
            "test_size": 40,
            "n_features": 8,
            "n_classes": 2,
            "noise": 0.5,
        },
        "model": {"depth": 2, "width": 6, "activation": "relu"},
        "e2e": {
            "optimizer": {"kind": "adam", "lr": 0.01},
            "epochs": 20,
            "batch_size": 20,
            "patience": 50,
        },
        "lego": {
            "optimizer": {"kind": "adam", "lr": 0.01},
            "epochs_per_layer": 5,
            "classifier_optimizer": {"kind": "adam", "lr": 0.01},
            "classifier_epochs": 20,
            "classifier_batch_size": 20,
        },
        "kernel_grid": {"sigma_w2": [1.0, 2.0], "sigma_b2": [0.0, 0.1]},
    }
    for section, values in sections.items():
        if isinstance(values, dict) and isinstance(settings.get(section), dict):
            settings[section] = {**settings[section], **values}
        else:
            settings[section] = values
    return settings


@pytest.fixture
def blob_config(tmp_path):
    """Validated config for the synthetic blob dataset writing under tmp_path."""
    return ExperimentConfig.model_validate(blob_settings(tmp_path / "runs"))
