"""
IDX codec (the MNIST file format).

    [offset] [type]          [value]
    0000     32 bit integer  0x00000803 images / 0x00000801 labels (big-endian)
    0004     32 bit integer  size of dimension 0
    ...      32 bit integer  size of each further dimension
    ....     unsigned byte   data, row-major

Image tensors are returned as float64 scaled to [0, 1]; label vectors as int64.
"""
import gzip
import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np

from dglego.exceptions import DataFormatError

logger = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
UBYTE = 0x08
MAX_ELEMENTS = 1 << 34


def _header(blob: bytes):
    if len(blob) < 4:
        raise DataFormatError("IDX stream truncated before the magic number")
    zero, dtype_code, ndim = struct.unpack(">HBB", blob[:4])
    magic = struct.unpack(">I", blob[:4])[0]
    if zero != 0 or dtype_code != UBYTE or magic not in (IMAGES_MAGIC, LABELS_MAGIC):
        raise DataFormatError(f"bad IDX magic 0x{magic:08x}")
    header_size = 4 + 4 * ndim
    if len(blob) < header_size:
        raise DataFormatError("IDX stream truncated inside the dimension header")
    dims = struct.unpack(f">{ndim}I", blob[4:header_size])
    return magic, dims, header_size


def parse_idx(blob: bytes) -> np.ndarray:
    """
    Decode an IDX stream.

    Args:
        blob: Raw (already decompressed) bytes

    Returns:
        Images as an (N, rows, cols) float64 array in [0, 1], or labels as an
        (N,) int64 array

    Raises:
        DataFormatError: On a bad magic number, a truncated stream or
            dimensions whose product overflows
    """
    magic, dims, offset = _header(blob)
    count = 1
    for size in dims:
        count *= size
        if count > MAX_ELEMENTS:
            raise DataFormatError(f"IDX dimensions {dims} overflow")
    if len(blob) - offset < count:
        raise DataFormatError(f"IDX stream truncated: expected {count} data bytes, found {len(blob) - offset}")
    if len(blob) - offset > count:
        logger.warning(f"Ignoring {len(blob) - offset - count} trailing bytes after IDX payload")
    data = np.frombuffer(blob, dtype=np.uint8, count=count, offset=offset).reshape(dims)
    if magic == LABELS_MAGIC:
        return data.astype(np.int64)
    return data.astype(np.float64) / 255.0


def serialize_idx(array: np.ndarray) -> bytes:
    """
    Encode labels (1-D integers) or images (values in [0, 1]) as an IDX stream.

    Images are quantized to round(255 x).
    """
    array = np.asarray(array)
    if array.ndim not in (1, 3):
        raise DataFormatError(f"IDX holds labels (N,) or images (N, rows, cols), got {array.shape}")
    if array.ndim == 1:
        if array.size and (array.min() < 0 or array.max() > 255):
            raise DataFormatError("IDX labels must fit in an unsigned byte")
        magic, payload = LABELS_MAGIC, array.astype(np.uint8)
    else:
        if array.size and (array.min() < 0.0 or array.max() > 1.0):
            raise DataFormatError("IDX images must lie in [0, 1]")
        magic, payload = IMAGES_MAGIC, np.rint(array * 255.0).astype(np.uint8)
    header = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    return header + payload.tobytes()


def read_bytes(path: Union[str, Path]) -> bytes:
    """File contents, transparently gunzipped for ``*.gz`` paths."""
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def load_idx(path: Union[str, Path]) -> np.ndarray:
    array = parse_idx(read_bytes(path))
    logger.info(f"Read {Path(path).name}: shape {array.shape}")
    return array
