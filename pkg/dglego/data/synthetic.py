"""Small synthetic datasets for oracle tests and quick runs."""
from typing import Optional, Tuple

import numpy as np

from dglego.models.data import DatasetSource, RawDataset


def _rng(rng: Optional[np.random.Generator]) -> np.random.Generator:
    return rng if rng is not None else np.random.default_rng(0)


def gaussian_blobs(
    n: int,
    n_features: int = 8,
    n_classes: int = 2,
    spread: float = 0.5,
    rng: Optional[np.random.Generator] = None,
) -> RawDataset:
    """
    Isotropic Gaussian clusters around random unit-norm centers.

    Labels cycle through the classes so every class gets n // C or n // C + 1 points.
    """
    rng = _rng(rng)
    centers = rng.standard_normal((n_classes, n_features))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    labels = rng.permutation(np.arange(n) % n_classes)
    images = centers[labels] + spread / np.sqrt(n_features) * rng.standard_normal((n, n_features))
    return RawDataset(images=images, labels=labels, source=DatasetSource.SYNTHETIC)


def two_moons(
    n: int,
    noise: float = 0.1,
    n_features: int = 2,
    rng: Optional[np.random.Generator] = None,
) -> RawDataset:
    """Two interleaved half circles, optionally embedded in more dimensions by a random rotation."""
    rng = _rng(rng)
    labels = rng.permutation(np.arange(n) % 2)
    t = rng.uniform(0.0, np.pi, size=n)
    x = np.where(labels == 0, np.cos(t), 1.0 - np.cos(t))
    y = np.where(labels == 0, np.sin(t), 0.5 - np.sin(t))
    points = np.stack([x, y], axis=1) + noise * rng.standard_normal((n, 2))
    if n_features > 2:
        basis, _ = np.linalg.qr(rng.standard_normal((n_features, n_features)))
        padded = np.zeros((n, n_features))
        padded[:, :2] = points
        points = padded @ basis.T
    return RawDataset(images=points, labels=labels, source=DatasetSource.SYNTHETIC)


def linear_gp_targets(
    n: int,
    dim: int,
    n_outputs: int = 1,
    sigma_w2: float = 1.0,
    noise: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Inputs with targets from a random linear map drawn from the NNGP prior.

    Returns:
        (X, targets) with X ~ N(0, I) of shape n x dim and
        targets = X W^T + noise, W ~ N(0, sigma_w2 / dim)
    """
    rng = _rng(rng)
    X = rng.standard_normal((n, dim))
    W = rng.normal(0.0, np.sqrt(sigma_w2 / dim), size=(n_outputs, dim))
    targets = X @ W.T + noise * rng.standard_normal((n, n_outputs))
    return X, targets
