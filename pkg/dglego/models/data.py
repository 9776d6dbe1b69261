"""Dataset models: raw image datasets, split specifications and labeled activations."""
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from dglego.exceptions import LabelError, ShapeError

MNIST_DIM = 784
CIFAR10_DIM = 3072


class DatasetSource(str, Enum):
    """Where a raw dataset came from."""

    MNIST = "mnist"
    CIFAR10 = "cifar10"
    SYNTHETIC = "synthetic"


class TargetEncoding(str, Enum):
    """How integer labels become regression targets."""

    ONE_HOT = "one_hot"
    ZERO_MEAN_ONE_HOT = "zero_mean_one_hot"


def encode_targets(labels: np.ndarray, n_classes: int, encoding: TargetEncoding) -> np.ndarray:
    """
    Encode integer labels as target rows.

    Args:
        labels: Integer labels in [0, n_classes)
        n_classes: Number of classes C
        encoding: One-hot or zero-mean one-hot

    Returns:
        N x C float64 target matrix
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelError(f"labels must lie in [0, {n_classes})")
    targets = np.zeros((labels.shape[0], n_classes), dtype=np.float64)
    targets[np.arange(labels.shape[0]), labels] = 1.0
    if TargetEncoding(encoding) is TargetEncoding.ZERO_MEAN_ONE_HOT:
        targets -= 1.0 / n_classes
    return targets


@dataclass(frozen=True)
class LabeledActivations:
    """
    N activation row-vectors together with their targets.

    Attributes:
        H: N x d activation matrix (row n is h_n)
        targets: N x C target matrix L
        labels: N integer label ids
    """

    H: np.ndarray
    targets: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        H = np.asarray(self.H, dtype=np.float64)
        if H.ndim == 1:
            H = H[:, None]
        targets = np.asarray(self.targets, dtype=np.float64)
        if targets.ndim == 1:
            targets = targets[:, None]
        labels = np.asarray(self.labels, dtype=np.int64)
        if H.ndim != 2 or targets.ndim != 2:
            raise ShapeError("H and targets must be matrices")
        if not (H.shape[0] == targets.shape[0] == labels.shape[0]):
            raise ShapeError(
                f"row counts disagree: H={H.shape[0]} targets={targets.shape[0]} "
                f"labels={labels.shape[0]}"
            )
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_labels(
        cls,
        H: np.ndarray,
        labels: Sequence[int],
        n_classes: Optional[int] = None,
        encoding: TargetEncoding = TargetEncoding.ZERO_MEAN_ONE_HOT,
    ) -> "LabeledActivations":
        """Build from integer labels, encoding the targets."""
        labels = np.asarray(labels, dtype=np.int64)
        if n_classes is None:
            n_classes = int(labels.max()) + 1 if labels.size else 1
        return cls(H=H, targets=encode_targets(labels, n_classes, encoding), labels=labels)

    @property
    def n(self) -> int:
        return int(self.H.shape[0])

    @property
    def dim(self) -> int:
        return int(self.H.shape[1])

    @property
    def n_classes(self) -> int:
        return int(self.targets.shape[1])

    def subset(self, indices: Sequence[int]) -> "LabeledActivations":
        """Rows selected by ``indices`` (order preserved)."""
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledActivations(H=self.H[idx], targets=self.targets[idx], labels=self.labels[idx])

    def with_activations(self, H: np.ndarray) -> "LabeledActivations":
        """Same targets, different representation."""
        return LabeledActivations(H=H, targets=self.targets, labels=self.labels)

    def target_gram(self) -> np.ndarray:
        """N x N matrix of target dot products l_n . l_m."""
        return self.targets @ self.targets.T

    def is_one_hot(self, atol: float = 1e-12) -> bool:
        t = self.targets
        return bool(
            np.all((np.abs(t) < atol) | (np.abs(t - 1.0) < atol))
            and np.allclose(t.sum(axis=1), 1.0, atol=atol)
        )

    def is_zero_mean_one_hot(self, atol: float = 1e-12) -> bool:
        shifted = LabeledActivations(
            H=self.H, targets=self.targets + 1.0 / self.n_classes, labels=self.labels
        )
        return bool(np.allclose(self.targets.sum(axis=1), 0.0, atol=atol) and shifted.is_one_hot(atol))


@dataclass(frozen=True)
class RawDataset:
    """Flattened images with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    source: DatasetSource
    class_names: Tuple[int, ...] = field(default=())

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        if images.ndim > 2:
            images = images.reshape(images.shape[0], -1)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.shape[0] != labels.shape[0]:
            raise ShapeError(f"{images.shape[0]} images but {labels.shape[0]} labels")
        expected = {DatasetSource.MNIST: MNIST_DIM, DatasetSource.CIFAR10: CIFAR10_DIM}.get(
            DatasetSource(self.source)
        )
        if expected is not None and images.shape[0] and images.shape[1] != expected:
            raise ShapeError(f"{self.source} images must have {expected} features, got {images.shape[1]}")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)
        if not self.class_names:
            object.__setattr__(self, "class_names", tuple(int(c) for c in np.unique(labels)))

    @property
    def n(self) -> int:
        return int(self.images.shape[0])

    @property
    def dim(self) -> int:
        return int(self.images.shape[1])


class SplitSpec(BaseModel):
    """How to carve train/validation/test sets out of a raw dataset."""

    model_config = ConfigDict(extra="forbid")

    train_size: int = Field(..., gt=0, description="Number of training samples")
    classes: Optional[List[int]] = Field(
        default=None, description="Keep only these label ids (e.g. [1, 7] for binary MNIST)"
    )
    balanced: bool = Field(default=True, description="Equal per-class counts in train and val")
    seed: int = Field(default=0, description="Seed of the sampling permutation")
    val_size: Optional[int] = Field(
        default=None, gt=0, description="Validation size; defaults to train_size"
    )
    test_size: Optional[int] = Field(
        default=None, gt=0, description="Cap on the test-set size; None keeps all"
    )
    encoding: TargetEncoding = Field(default=TargetEncoding.ZERO_MEAN_ONE_HOT)
    standardize: bool = Field(
        default=False, description="Per-feature standardization using train statistics"
    )

    @model_validator(mode="after")
    def _fill_val_size(self) -> "SplitSpec":
        if self.val_size is None:
            self.val_size = self.train_size
        return self
