"""
Binary checkpoint codec for LayerStack.

Layout (little-endian):

    magic   4 bytes  b"DGLS"
    version u32      1
    layers  u32
    per layer:
        activation u8   (0 relu, 1 erf, 2 identity)
        frozen     u8
        d_out      u32
        d_in       u32
        weights    d_out * d_in float64, row-major
        bias       d_out float64
"""
import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np

from dglego.exceptions import DataFormatError
from dglego.nn.layers import Layer, LayerActivation, LayerStack

logger = logging.getLogger(__name__)

MAGIC = b"DGLS"
VERSION = 1
_HEADER = struct.Struct("<4sII")
_LAYER_HEADER = struct.Struct("<BBII")
_ACTIVATION_CODES = {LayerActivation.RELU: 0, LayerActivation.ERF: 1, LayerActivation.IDENTITY: 2}
_ACTIVATIONS = {code: kind for kind, code in _ACTIVATION_CODES.items()}


def encode_stack(stack: LayerStack) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, len(stack))]
    for layer in stack.layers:
        parts.append(
            _LAYER_HEADER.pack(
                _ACTIVATION_CODES[layer.activation], int(layer.frozen), layer.d_out, layer.d_in
            )
        )
        parts.append(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_stack(blob: bytes) -> LayerStack:
    """
    Parse a checkpoint.

    Raises:
        DataFormatError: On a bad magic, unknown version or truncated stream
    """
    if len(blob) < _HEADER.size:
        raise DataFormatError("checkpoint truncated in header")
    magic, version, count = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise DataFormatError(f"bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise DataFormatError(f"unsupported checkpoint version {version}")
    offset = _HEADER.size
    layers = []
    for i in range(count):
        if offset + _LAYER_HEADER.size > len(blob):
            raise DataFormatError(f"checkpoint truncated at layer {i}")
        code, frozen, d_out, d_in = _LAYER_HEADER.unpack_from(blob, offset)
        offset += _LAYER_HEADER.size
        if code not in _ACTIVATIONS:
            raise DataFormatError(f"unknown activation code {code} in layer {i}")
        n_weights = d_out * d_in
        end = offset + 8 * (n_weights + d_out)
        if end > len(blob):
            raise DataFormatError(f"checkpoint truncated in parameters of layer {i}")
        weights = np.frombuffer(blob, dtype="<f8", count=n_weights, offset=offset)
        bias = np.frombuffer(blob, dtype="<f8", count=d_out, offset=offset + 8 * n_weights)
        layers.append(
            Layer(
                weights=weights.reshape(d_out, d_in).astype(np.float64),
                bias=bias.astype(np.float64),
                activation=_ACTIVATIONS[code],
                frozen=bool(frozen),
            )
        )
        offset = end
    if offset != len(blob):
        raise DataFormatError(f"{len(blob) - offset} trailing bytes after the last layer")
    return LayerStack(layers)


def save_stack(stack: LayerStack, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_stack(stack))
    logger.info(f"Saved {len(stack)}-layer checkpoint to {path}")
    return path


def load_stack(path: Union[str, Path]) -> LayerStack:
    return decode_stack(Path(path).read_bytes())
