# -*- coding: utf-8 -*-
# ------------------------------------------------------------------------------
#
#   Copyright 2026 Valory AG
#
#   Licensed under the Apache License, Version 2.0 (the "License");
#   you may not use this file except in compliance with the License.
#   You may obtain a copy of the License at
#
#       http://www.apache.org/licenses/LICENSE-2.0
#
#   Unless required by applicable law or agreed to in writing, software
#   distributed under the License is distributed on an "AS IS" BASIS,
#   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#   See the License for the specific language governing permissions and
#   limitations under the License.
#
# ------------------------------------------------------------------------------

"""This module contains the binary parameter container and the save/load of network parameters.

Layout (all integers little-endian):

    magic            8 bytes   b"JSSNET\0\0"
    version          uint16
    header_length    uint32
    header           UTF-8 JSON, keys sorted: kind, producer, network_config
                     and, for training checkpoints, train_state
    tensor_count     uint32
    per tensor:
        name_length  uint16, then the UTF-8 name
        dtype_length uint8, then the NumPy dtype string ("<f4", "<f8", "<i8")
        ndim         uint8, then ndim uint32 extents
        values       little-endian, C order
    crc32            uint32 of every preceding byte

Batch-norm statistics are stored as `<layer>.running_mean`,
`<layer>.running_var` and `<layer>.num_batches_tracked` tensors.
"""

import json
import struct
import zlib
from collections import OrderedDict
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np

from packages.valory.skills.joint_stem_seg import PUBLIC_ID
from packages.valory.skills.joint_stem_seg.autodiff.functional import BatchNormState
from packages.valory.skills.joint_stem_seg.autodiff.tensor import Tensor
from packages.valory.skills.joint_stem_seg.models import NetworkConfig, from_mapping
from packages.valory.skills.joint_stem_seg.network.params import (
    ModelParams,
    parameter_layout,
)
from packages.valory.skills.joint_stem_seg.utils import (
    PathLike,
    atomic_write_bytes,
    to_json,
)

MAGIC = b"JSSNET\x00\x00"
VERSION = 1
SUPPORTED_DTYPES = ("<f4", "<f8", "<i8")
PARAMS_KIND = "params"
RUNNING_MEAN = "running_mean"
RUNNING_VAR = "running_var"
NUM_BATCHES_TRACKED = "num_batches_tracked"
OPTIMIZER_PREFIX = "adam."

Arrays = Dict[str, np.ndarray]


class CheckpointError(ValueError):
    """A parameter file is corrupt or does not fit the requested configuration."""


class _Reader:
    """Sequential reader over the container bytes that reports truncation."""

    def __init__(self, content: bytes, source: str) -> None:
        """Start at the first byte."""
        self.content = content
        self.source = source
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        """Consume `size` bytes."""
        end = self.offset + size
        if end > len(self.content):
            raise CheckpointError(
                f"{self.source} is corrupt: truncated while reading {what}"
            )
        chunk = self.content[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str, what: str) -> Tuple[Any, ...]:
        """Consume and decode a struct."""
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def encode_container(header: Mapping[str, Any], arrays: Mapping[str, np.ndarray]) -> bytes:
    """Serialize a header and named arrays into the container format."""
    header_bytes = to_json(header, separators=(",", ":")).encode("utf-8")
    chunks = [
        MAGIC,
        struct.pack("<HI", VERSION, len(header_bytes)),
        header_bytes,
        struct.pack("<I", len(arrays)),
    ]
    for name, array in arrays.items():
        dtype = np.dtype(array.dtype).newbyteorder("<")
        if dtype.str not in SUPPORTED_DTYPES:
            raise CheckpointError(f"tensor {name!r} has unsupported dtype {array.dtype}")
        name_bytes = name.encode("utf-8")
        dtype_bytes = dtype.str.encode("ascii")
        chunks.append(struct.pack("<H", len(name_bytes)) + name_bytes)
        chunks.append(struct.pack("<B", len(dtype_bytes)) + dtype_bytes)
        chunks.append(struct.pack(f"<B{array.ndim}I", array.ndim, *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype=dtype).tobytes())
    body = b"".join(chunks)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def decode_container(content: bytes, source: str = "container") -> Tuple[Dict[str, Any], Arrays]:
    """Parse container bytes, verifying the magic, version, lengths and checksum."""
    if len(content) < len(MAGIC) + 4:
        raise CheckpointError(f"{source} is corrupt: only {len(content)} bytes")
    if content[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{source} is not a parameter container (bad magic)")
    body, trailer = content[:-4], content[-4:]
    (expected_crc,) = struct.unpack("<I", trailer)
    if zlib.crc32(body) & 0xFFFFFFFF != expected_crc:
        raise CheckpointError(f"{source} is corrupt: checksum mismatch")

    reader = _Reader(body, source)
    reader.take(len(MAGIC), "magic")
    version, header_length = reader.unpack("<HI", "version")
    if version != VERSION:
        raise CheckpointError(f"{source} has unsupported version {version}")
    try:
        header = json.loads(reader.take(header_length, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{source} is corrupt: unreadable header ({e})") from e

    (count,) = reader.unpack("<I", "tensor count")
    arrays: Arrays = OrderedDict()
    for _ in range(count):
        (name_length,) = reader.unpack("<H", "tensor name")
        name = reader.take(name_length, "tensor name").decode("utf-8")
        (dtype_length,) = reader.unpack("<B", f"dtype of {name}")
        dtype = reader.take(dtype_length, f"dtype of {name}").decode("ascii")
        if dtype not in SUPPORTED_DTYPES:
            raise CheckpointError(f"{source}: tensor {name!r} has unsupported dtype {dtype}")
        (ndim,) = reader.unpack("<B", f"rank of {name}")
        shape = reader.unpack(f"<{ndim}I", f"shape of {name}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * np.dtype(dtype).itemsize
        values = reader.take(nbytes, f"values of {name}")
        arrays[name] = np.frombuffer(values, dtype=dtype).reshape(shape).copy()
    if reader.offset != len(body):
        raise CheckpointError(f"{source} is corrupt: trailing bytes after the last tensor")
    return header, arrays


def write_container(path: PathLike, header: Mapping[str, Any], arrays: Mapping[str, np.ndarray]) -> None:
    """Atomically write a container file."""
    atomic_write_bytes(path, encode_container(header, arrays))


def read_container(path: PathLike) -> Tuple[Dict[str, Any], Arrays]:
    """Read and verify a container file."""
    try:
        with open(path, "rb") as file:
            content = file.read()
    except OSError as e:
        raise CheckpointError(f"cannot read {path}: {e}") from e
    return decode_container(content, str(path))


def params_to_arrays(params: ModelParams) -> Arrays:
    """Flatten the parameters and batch-norm statistics into named arrays."""
    arrays: Arrays = OrderedDict((name, tensor.data) for name, tensor in params)
    for name, state in params.bn_states.items():
        arrays[f"{name}.{RUNNING_MEAN}"] = state.running_mean
        arrays[f"{name}.{RUNNING_VAR}"] = state.running_var
        arrays[f"{name}.{NUM_BATCHES_TRACKED}"] = np.asarray(
            state.num_batches_tracked, dtype="<i8"
        )
    return arrays


def params_from_arrays(cfg: NetworkConfig, arrays: Mapping[str, np.ndarray], source: str) -> ModelParams:
    """Rebuild parameters, checking every name and shape against the configuration's layout."""
    layout = parameter_layout(cfg)
    expected = dict(layout.shapes)
    for name in layout.batch_norms:
        channels = layout.batch_norms[name]
        expected[f"{name}.{RUNNING_MEAN}"] = (channels,)
        expected[f"{name}.{RUNNING_VAR}"] = (channels,)
        expected[f"{name}.{NUM_BATCHES_TRACKED}"] = ()
    missing = sorted(set(expected) - set(arrays))
    extra = sorted(set(arrays) - set(expected))
    if missing or extra:
        raise CheckpointError(
            f"{source} does not match its network configuration: "
            f"missing {missing[:5]}, unexpected {extra[:5]}"
        )
    for name, shape in expected.items():
        if tuple(arrays[name].shape) != tuple(shape):
            raise CheckpointError(
                f"{source}: tensor {name!r} has shape {arrays[name].shape}, expected {shape}"
            )
    tensors = OrderedDict(
        (name, Tensor(arrays[name], requires_grad=True)) for name in layout.shapes
    )
    bn_states = OrderedDict(
        (
            name,
            BatchNormState(
                running_mean=arrays[f"{name}.{RUNNING_MEAN}"].copy(),
                running_var=arrays[f"{name}.{RUNNING_VAR}"].copy(),
                num_batches_tracked=int(arrays[f"{name}.{NUM_BATCHES_TRACKED}"]),
            ),
        )
        for name in layout.batch_norms
    )
    return ModelParams(config=cfg, tensors=tensors, bn_states=bn_states)


def params_header(params: ModelParams, kind: str = PARAMS_KIND, **extra: Any) -> Dict[str, Any]:
    """The container header of a parameter file."""
    header: Dict[str, Any] = {
        "kind": kind,
        "producer": PUBLIC_ID,
        "network_config": params.config.to_dict(),
    }
    header.update(extra)
    return header


def save_params(params: ModelParams, path: PathLike) -> None:
    """Write the parameters with their network configuration."""
    write_container(path, params_header(params), params_to_arrays(params))


def config_from_header(header: Mapping[str, Any], source: str) -> NetworkConfig:
    """Rebuild the network configuration recorded in a header."""
    try:
        return from_mapping(NetworkConfig, header["network_config"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{source} has an invalid network configuration: {e}") from e


def check_config(stored: NetworkConfig, expected: Optional[NetworkConfig], source: str) -> None:
    """Refuse a file saved for another network configuration."""
    if expected is not None and stored != expected:
        raise CheckpointError(
            f"{source} was saved for network config {stored} "
            f"but network config {expected} was requested"
        )


def load_params(path: PathLike, expected_config: Optional[NetworkConfig] = None) -> ModelParams:
    """Read parameters, refusing a file whose configuration differs from `expected_config`.

    Training checkpoints load too; their optimizer moments are skipped.
    """
    header, arrays = read_container(path)
    stored = config_from_header(header, str(path))
    check_config(stored, expected_config, str(path))
    arrays = {
        name: array for name, array in arrays.items() if not name.startswith(OPTIMIZER_PREFIX)
    }
    return params_from_arrays(stored, arrays, str(path))
