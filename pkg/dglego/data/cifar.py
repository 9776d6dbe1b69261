"""CIFAR-10 binary batches: records of 1 label byte + 3072 pixel bytes (R, G, B planes)."""
import logging
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from dglego.data.idx import read_bytes
from dglego.exceptions import DataFormatError
from dglego.models.data import CIFAR10_DIM, DatasetSource, RawDataset

logger = logging.getLogger(__name__)

RECORD_SIZE = 1 + CIFAR10_DIM
N_CLASSES = 10


def parse_cifar10(blob: bytes) -> RawDataset:
    """
    Decode a CIFAR-10 binary batch.

    Raises:
        DataFormatError: If the stream is empty, not a whole number of records,
            or carries a label byte above 9
    """
    if len(blob) == 0:
        raise DataFormatError("CIFAR-10 stream holds zero records")
    if len(blob) % RECORD_SIZE:
        raise DataFormatError(f"CIFAR-10 stream length {len(blob)} is not a multiple of {RECORD_SIZE}")
    records = np.frombuffer(blob, dtype=np.uint8).reshape(-1, RECORD_SIZE)
    labels = records[:, 0].astype(np.int64)
    if labels.max() >= N_CLASSES:
        bad = int(np.argmax(labels >= N_CLASSES))
        raise DataFormatError(f"label byte {labels[bad]} > 9 in record {bad}")
    images = records[:, 1:].astype(np.float64) / 255.0
    return RawDataset(images=images, labels=labels, source=DatasetSource.CIFAR10)


def serialize_cifar10(data: RawDataset) -> bytes:
    if data.dim != CIFAR10_DIM:
        raise DataFormatError(f"CIFAR-10 records need {CIFAR10_DIM} pixels, got {data.dim}")
    records = np.empty((data.n, RECORD_SIZE), dtype=np.uint8)
    records[:, 0] = data.labels.astype(np.uint8)
    records[:, 1:] = np.rint(np.clip(data.images, 0.0, 1.0) * 255.0).astype(np.uint8)
    return records.tobytes()


def load_cifar10_batches(paths: Sequence[Union[str, Path]]) -> RawDataset:
    """Concatenate several batch files into one dataset."""
    parts = [parse_cifar10(read_bytes(p)) for p in paths]
    logger.info(f"Read {sum(p.n for p in parts)} CIFAR-10 records from {len(parts)} batch files")
    return RawDataset(
        images=np.concatenate([p.images for p in parts]),
        labels=np.concatenate([p.labels for p in parts]),
        source=DatasetSource.CIFAR10,
    )
