"""Tests for the IDX and CIFAR-10 codecs, dataset loading and splitting."""
import gzip
import logging

import numpy as np
import pytest

from dglego.data.cifar import RECORD_SIZE, load_cifar10_batches, parse_cifar10, serialize_cifar10
from dglego.data.idx import load_idx, parse_idx, serialize_idx
from dglego.data.loaders import MNIST_FILES, load_mnist, load_split, mnist_available
from dglego.data.splits import make_split
from dglego.data.synthetic import gaussian_blobs, linear_gp_targets, two_moons
from dglego.exceptions import ConfigError, DataError, DataFormatError, InsufficientDataError
from dglego.models.data import DatasetSource, RawDataset, SplitSpec
from dglego.models.experiment import DatasetConfig


def test_idx_label_header_by_hand():
    blob = serialize_idx(np.array([3, 1]))
    assert blob == b"\x00\x00\x08\x01\x00\x00\x00\x02\x03\x01"
    np.testing.assert_array_equal(parse_idx(blob), [3, 1])
    assert parse_idx(blob).dtype == np.int64


def test_idx_two_images_round_trip():
    images = np.array([[[0, 51], [102, 255]], [[255, 0], [3, 7]]]) / 255.0
    parsed = parse_idx(serialize_idx(images))
    assert parsed.shape == (2, 2, 2)
    np.testing.assert_array_equal(parsed, images)


def test_idx_rejects_bad_streams():
    blob = serialize_idx(np.zeros((2, 2, 2)))
    with pytest.raises(DataFormatError):
        parse_idx(b"\x00\x00\x09\x03" + blob[4:])
    with pytest.raises(DataFormatError):
        parse_idx(blob[:-1])
    with pytest.raises(DataFormatError):
        parse_idx(blob[:6])
    with pytest.raises(DataFormatError):
        parse_idx(b"\x00\x00\x08\x03\xff\xff\xff\xff\xff\xff\xff\xff\xff\xff\xff\xff")
    with pytest.raises(DataFormatError):
        serialize_idx(np.zeros((2, 2)))


def test_idx_trailing_bytes_are_ignored_with_a_warning(caplog):
    blob = serialize_idx(np.array([1, 2, 3])) + b"\x00\x00"
    with caplog.at_level(logging.WARNING):
        parsed = parse_idx(blob)
    np.testing.assert_array_equal(parsed, [1, 2, 3])
    assert "trailing" in caplog.text


def test_idx_gzip_files(tmp_path):
    path = tmp_path / "labels-idx1-ubyte.gz"
    with gzip.open(path, "wb") as f:
        f.write(serialize_idx(np.arange(10)))
    np.testing.assert_array_equal(load_idx(path), np.arange(10))


def _cifar(n, rng):
    return RawDataset(
        images=rng.integers(0, 256, size=(n, 3072)) / 255.0,
        labels=np.arange(n) % 10,
        source=DatasetSource.CIFAR10,
    )


def test_cifar_record_round_trip(rng):
    original = _cifar(1, rng)
    blob = serialize_cifar10(original)
    assert len(blob) == RECORD_SIZE
    parsed = parse_cifar10(blob)
    np.testing.assert_array_equal(parsed.images, original.images)
    np.testing.assert_array_equal(parsed.labels, original.labels)


def test_cifar_rejects_bad_streams(rng):
    with pytest.raises(DataFormatError):
        parse_cifar10(b"")
    with pytest.raises(DataFormatError):
        parse_cifar10(b"\x00" * (RECORD_SIZE + 1))
    bad_label = bytearray(serialize_cifar10(_cifar(2, rng)))
    bad_label[RECORD_SIZE] = 10
    with pytest.raises(DataFormatError):
        parse_cifar10(bytes(bad_label))


def test_cifar_batches_are_concatenated(tmp_path, rng):
    paths = []
    for i in range(2):
        path = tmp_path / f"data_batch_{i}.bin"
        path.write_bytes(serialize_cifar10(_cifar(3, rng)))
        paths.append(path)
    data = load_cifar10_batches(paths)
    assert data.n == 6 and data.dim == 3072


def _pool(n_per_class=10, n_classes=3):
    labels = np.repeat(np.arange(n_classes), n_per_class)
    images = np.arange(labels.size)[:, None] + np.zeros((1, 4))
    return RawDataset(images=images, labels=labels, source=DatasetSource.SYNTHETIC)


def test_balanced_split_counts_and_encoding():
    split = make_split(_pool(), SplitSpec(train_size=6, val_size=3, seed=1))
    assert np.bincount(split.train.labels).tolist() == [2, 2, 2]
    assert np.bincount(split.val.labels).tolist() == [1, 1, 1]
    np.testing.assert_allclose(split.train.targets.sum(axis=1), 0.0, atol=1e-15)
    assert split.train.is_zero_mean_one_hot()
    assert split.test.n == 30 - 9


def test_split_sets_are_disjoint():
    split = make_split(_pool(20, 2), SplitSpec(train_size=10, seed=3))
    indices = [set(split.train_indices), set(split.val_indices), set(split.test_indices)]
    assert not indices[0] & indices[1]
    assert not indices[0] & indices[2]
    assert not indices[1] & indices[2]
    # images encode their pool index, so rows follow the recorded indices
    np.testing.assert_array_equal(split.train.H[:, 0], split.train_indices)


def test_class_filter_renumbers_labels():
    pool = RawDataset(np.zeros((40, 2)), np.repeat([1, 3, 7, 9], 10), DatasetSource.SYNTHETIC)
    split = make_split(pool, SplitSpec(train_size=4, classes=[7, 1], seed=0))
    assert split.class_ids == (1, 7)
    assert set(split.train.labels) == {0, 1}
    assert split.train.n_classes == 2
    assert split.test.n == 20 - 8


def test_split_errors():
    with pytest.raises(ConfigError):
        make_split(_pool(), SplitSpec(train_size=4, seed=0))
    with pytest.raises(InsufficientDataError):
        make_split(_pool(), SplitSpec(train_size=30, seed=0))
    with pytest.raises(InsufficientDataError):
        make_split(_pool(), SplitSpec(train_size=20, val_size=20, balanced=False, seed=0))


def test_split_test_cap_and_standardization():
    split = make_split(_pool(), SplitSpec(train_size=6, test_size=5, standardize=True, seed=2))
    assert split.test.n == 5
    np.testing.assert_allclose(split.train.H.mean(axis=0), 0.0, atol=1e-12)


def test_split_is_reproducible():
    first = make_split(_pool(), SplitSpec(train_size=6, seed=5))
    second = make_split(_pool(), SplitSpec(train_size=6, seed=5))
    np.testing.assert_array_equal(first.train_indices, second.train_indices)


def _write_mnist(directory, n_train=40, n_test=10):
    root = directory / "mnist"
    root.mkdir(parents=True)
    rng = np.random.default_rng(0)
    arrays = {
        "train_images": rng.integers(0, 256, size=(n_train, 28, 28)) / 255.0,
        "train_labels": np.arange(n_train) % 10,
        "test_images": rng.integers(0, 256, size=(n_test, 28, 28)) / 255.0,
        "test_labels": np.arange(n_test) % 10,
    }
    for key, name in MNIST_FILES.items():
        (root / name).write_bytes(serialize_idx(arrays[key]))


def test_mnist_loading_from_a_directory(tmp_path):
    assert not mnist_available(tmp_path)
    _write_mnist(tmp_path)
    assert mnist_available(tmp_path)
    train, test = load_mnist(tmp_path)
    assert (train.n, train.dim, test.n) == (40, 784, 10)
    config = DatasetConfig(name="mnist", train_size=4, val_size=2, classes=[1, 7])
    split = load_split(config, seed=0, dataset_dir=tmp_path)
    assert split.train.n == 4 and split.val.n == 2
    assert split.test.n == 2
    with pytest.raises(DataError):
        load_mnist(tmp_path / "missing")


def test_synthetic_generators(rng):
    blobs = gaussian_blobs(30, n_features=5, n_classes=3, rng=rng)
    assert blobs.images.shape == (30, 5)
    assert np.bincount(blobs.labels).tolist() == [10, 10, 10]
    moons = two_moons(20, n_features=4, rng=rng)
    assert moons.images.shape == (20, 4)
    X, targets = linear_gp_targets(15, 3, n_outputs=2, rng=rng)
    assert X.shape == (15, 3) and targets.shape == (15, 2)


def test_synthetic_split_from_config():
    config = DatasetConfig(name="two_moons", train_size=10, val_size=10, test_size=10, n_features=2)
    split = load_split(config, seed=0)
    assert [part.n for part in split] == [10, 10, 10]
