"""Train / validation / test splitting with class filtering and balancing."""
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from dglego.exceptions import ConfigError, InsufficientDataError
from dglego.models.data import DatasetSource, LabeledActivations, RawDataset, SplitSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DataSplit:
    """The three sets of a run plus the raw indices they were drawn from."""

    train: LabeledActivations
    val: LabeledActivations
    test: LabeledActivations
    train_indices: np.ndarray
    val_indices: np.ndarray
    test_indices: np.ndarray
    class_ids: Tuple[int, ...]

    def __iter__(self):
        return iter((self.train, self.val, self.test))

    def summary(self) -> Dict[str, int]:
        return {"train": self.train.n, "val": self.val.n, "test": self.test.n, "classes": len(self.class_ids)}


def _filter(raw: RawDataset, class_ids: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Indices of kept samples and their labels remapped to 0..C-1."""
    keep = np.flatnonzero(np.isin(raw.labels, class_ids))
    return keep, np.searchsorted(class_ids, raw.labels[keep])


def _draw_balanced(labels: np.ndarray, sizes: Tuple[int, int], n_classes: int, rng: np.random.Generator):
    for size in sizes:
        if size % n_classes:
            raise ConfigError(f"balanced split size {size} is not divisible by {n_classes} classes")
    per_train, per_val = sizes[0] // n_classes, sizes[1] // n_classes
    train, val = [], []
    for c in range(n_classes):
        members = rng.permutation(np.flatnonzero(labels == c))
        if members.size < per_train + per_val:
            raise InsufficientDataError(
                f"class {c} has {members.size} samples, {per_train + per_val} needed"
            )
        train.append(members[:per_train])
        val.append(members[per_train : per_train + per_val])
    return rng.permutation(np.concatenate(train)), rng.permutation(np.concatenate(val))


def _draw(labels: np.ndarray, sizes: Tuple[int, int], rng: np.random.Generator):
    if labels.size < sizes[0] + sizes[1]:
        raise InsufficientDataError(f"{labels.size} samples, {sizes[0] + sizes[1]} needed")
    order = rng.permutation(labels.size)
    return order[: sizes[0]], order[sizes[0] : sizes[0] + sizes[1]]


def make_split(raw: RawDataset, spec: SplitSpec, test_raw: Optional[RawDataset] = None) -> DataSplit:
    """
    Carve train, validation and test sets out of raw data.

    The class filter is applied first and kept labels are renumbered in
    increasing order (e.g. {1, 7} becomes {0, 1}). Train and validation are
    balanced when requested; the test set is never balanced.

    Args:
        raw: Pool for train and validation (and test when ``test_raw`` is None)
        spec: Split sizes, filter, seed and target encoding
        test_raw: Separate test pool, e.g. the official MNIST test file

    Returns:
        DataSplit

    Raises:
        InsufficientDataError: If a class (or the pool) is too small
        ConfigError: If a balanced size is not divisible by the class count
    """
    rng = np.random.default_rng(spec.seed)
    class_ids = np.array(sorted(spec.classes) if spec.classes else sorted(raw.class_names), dtype=np.int64)
    n_classes = class_ids.size
    pool, labels = _filter(raw, class_ids)
    sizes = (spec.train_size, spec.val_size)
    if spec.balanced:
        train_pos, val_pos = _draw_balanced(labels, sizes, n_classes, rng)
    else:
        train_pos, val_pos = _draw(labels, sizes, rng)

    if test_raw is None:
        test_source = raw
        used = np.zeros(pool.size, dtype=bool)
        used[train_pos] = True
        used[val_pos] = True
        test_pool, test_labels = pool[~used], labels[~used]
    else:
        test_source = test_raw
        test_pool, test_labels = _filter(test_raw, class_ids)
    if spec.test_size is not None and spec.test_size < test_pool.size:
        pick = np.sort(rng.choice(test_pool.size, size=spec.test_size, replace=False))
        test_pool, test_labels = test_pool[pick], test_labels[pick]

    X_train = raw.images[pool[train_pos]]
    X_val = raw.images[pool[val_pos]]
    X_test = test_source.images[test_pool]
    if spec.standardize:
        mean = X_train.mean(axis=0)
        std = X_train.std(axis=0)
        std[std == 0.0] = 1.0
        X_train, X_val, X_test = ((X - mean) / std for X in (X_train, X_val, X_test))

    def build(X, y):
        return LabeledActivations.from_labels(X, y, n_classes=n_classes, encoding=spec.encoding)

    split = DataSplit(
        train=build(X_train, labels[train_pos]),
        val=build(X_val, labels[val_pos]),
        test=build(X_test, test_labels),
        train_indices=pool[train_pos],
        val_indices=pool[val_pos],
        test_indices=test_pool,
        class_ids=tuple(int(c) for c in class_ids),
    )
    logger.info(f"Split {DatasetSource(raw.source).value}: {split.summary()}")
    return split
