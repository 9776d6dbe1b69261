#!/usr/bin/env python3
"""
Download MNIST and CIFAR-10 into the dataset directory.

Layout produced (what dglego.data.loaders expects):

    <dataset_dir>/mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte.gz
    <dataset_dir>/cifar10/cifar-10-batches-bin/{data_batch_1..5,test_batch}.bin
"""
import argparse
import logging
import sys
import tarfile
from pathlib import Path

import httpx

# Add parent directory to path
parent_dir = Path(__file__).parent.parent
sys.path.append(str(parent_dir))

from dglego.config import DATASET_DIR, LOG_FORMAT  # noqa: E402
from dglego.data.loaders import MNIST_FILES, mnist_available  # noqa: E402

logging.basicConfig(level=logging.INFO, format=LOG_FORMAT, handlers=[logging.StreamHandler()])
logger = logging.getLogger("fetch_datasets")

MNIST_MIRROR = "https://storage.googleapis.com/cvdf-datasets/mnist"
CIFAR10_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"


def download(client: httpx.Client, url: str, target: Path) -> Path:
    """Stream ``url`` to ``target`` unless it is already there."""
    if target.exists():
        logger.info(f"{target} exists, skipping")
        return target
    target.parent.mkdir(parents=True, exist_ok=True)
    partial = target.with_suffix(target.suffix + ".part")
    logger.info(f"Downloading {url}")
    with client.stream("GET", url) as response:
        response.raise_for_status()
        with open(partial, "wb") as f:
            for chunk in response.iter_bytes():
                f.write(chunk)
    partial.rename(target)
    return target


def fetch_mnist(client: httpx.Client, dataset_dir: Path) -> None:
    if mnist_available(dataset_dir):
        logger.info("MNIST already present")
        return
    for name in MNIST_FILES.values():
        download(client, f"{MNIST_MIRROR}/{name}.gz", dataset_dir / "mnist" / f"{name}.gz")


def fetch_cifar10(client: httpx.Client, dataset_dir: Path) -> None:
    root = dataset_dir / "cifar10"
    if (root / "cifar-10-batches-bin" / "test_batch.bin").exists():
        logger.info("CIFAR-10 already present")
        return
    archive = download(client, CIFAR10_URL, root / "cifar-10-binary.tar.gz")
    logger.info(f"Extracting {archive}")
    with tarfile.open(archive, "r:gz") as tar:
        if hasattr(tarfile, "data_filter"):
            tar.extractall(root, filter="data")
        else:
            tar.extractall(root)


def main():
    """Main entry point."""
    parser = argparse.ArgumentParser(description="Download the datasets used by dglego")
    parser.add_argument("datasets", nargs="*", choices=["mnist", "cifar10"], default=["mnist"])
    parser.add_argument("--dataset-dir", type=Path, default=DATASET_DIR, help="Target directory")
    parser.add_argument("--timeout", type=float, default=60.0, help="HTTP timeout in seconds")
    args = parser.parse_args()

    fetchers = {"mnist": fetch_mnist, "cifar10": fetch_cifar10}
    try:
        with httpx.Client(timeout=args.timeout, follow_redirects=True) as client:
            for name in args.datasets:
                fetchers[name](client, args.dataset_dir)
    except httpx.HTTPError as e:
        logger.error(f"Download failed: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
