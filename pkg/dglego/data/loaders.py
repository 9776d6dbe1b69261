"""Locate dataset files on disk and turn a dataset config into a split."""
import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from dglego.config import DATASET_DIR
from dglego.data.cifar import load_cifar10_batches
from dglego.data.idx import load_idx
from dglego.data.splits import DataSplit, make_split
from dglego.data.synthetic import gaussian_blobs, two_moons
from dglego.exceptions import DataError
from dglego.models.data import DatasetSource, RawDataset
from dglego.models.experiment import DatasetConfig, DatasetName

logger = logging.getLogger(__name__)

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
CIFAR10_SUBDIR = "cifar-10-batches-bin"
CIFAR10_TRAIN = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR10_TEST = ["test_batch.bin"]


def _find(directory: Path, name: str) -> Path:
    for candidate in (directory / name, directory / f"{name}.gz", directory / name.replace("-idx", ".idx")):
        if candidate.exists():
            return candidate
    raise DataError(f"{name} not found in {directory}")


def mnist_available(directory: Union[str, Path, None] = None) -> bool:
    directory = Path(directory or DATASET_DIR) / "mnist"
    try:
        for name in MNIST_FILES.values():
            _find(directory, name)
    except DataError:
        return False
    return True


def load_mnist(directory: Union[str, Path, None] = None) -> Tuple[RawDataset, RawDataset]:
    """
    Official MNIST train and test sets from ``<directory>/mnist``.

    Raises:
        DataError: If a file is missing or malformed
    """
    root = Path(directory or DATASET_DIR) / "mnist"
    arrays = {key: load_idx(_find(root, name)) for key, name in MNIST_FILES.items()}
    train = RawDataset(arrays["train_images"], arrays["train_labels"], DatasetSource.MNIST)
    test = RawDataset(arrays["test_images"], arrays["test_labels"], DatasetSource.MNIST)
    return train, test


def load_cifar10(directory: Union[str, Path, None] = None) -> Tuple[RawDataset, RawDataset]:
    """CIFAR-10 train (five batches) and test batch from ``<directory>/cifar10``."""
    root = Path(directory or DATASET_DIR) / "cifar10"
    if (root / CIFAR10_SUBDIR).is_dir():
        root = root / CIFAR10_SUBDIR
    missing = [name for name in CIFAR10_TRAIN + CIFAR10_TEST if not (root / name).exists()]
    if missing:
        raise DataError(f"CIFAR-10 files missing in {root}: {', '.join(missing)}")
    train = load_cifar10_batches([root / name for name in CIFAR10_TRAIN])
    test = load_cifar10_batches([root / name for name in CIFAR10_TEST])
    return train, test


def load_split(config: DatasetConfig, seed: int, dataset_dir: Optional[Path] = None) -> DataSplit:
    """
    Build the train/validation/test split a run is configured with.

    Synthetic datasets are generated from ``seed``; image datasets are read
    from ``config.dir``, then ``dataset_dir``, then DGLEGO_DATASET_DIR.
    """
    spec = config.split_spec(seed)
    if config.name in (DatasetName.SYNTHETIC_BLOBS, DatasetName.TWO_MOONS):
        test_size = config.test_size or config.train_size
        n = config.train_size + spec.val_size + test_size
        rng = np.random.default_rng(seed)
        if config.name is DatasetName.SYNTHETIC_BLOBS:
            raw = gaussian_blobs(n, config.n_features, config.n_classes, config.noise, rng)
        else:
            raw = two_moons(n, config.noise, config.n_features, rng)
        return make_split(raw, spec)
    directory = config.dir or dataset_dir or DATASET_DIR
    if config.name is DatasetName.MNIST:
        train, test = load_mnist(directory)
    else:
        train, test = load_cifar10(directory)
    return make_split(train, spec, test_raw=test)
