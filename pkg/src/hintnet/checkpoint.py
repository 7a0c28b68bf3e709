"""Fixed-layout binary checkpoints for the named parameter tensors.

Layout (all integers little-endian):

    magic   4 bytes  b"HNTC"
    version u32      1
    count   u32      number of tensors
    per tensor, in declaration order:
        name_len u16, name utf-8 bytes, ndim u8, dims u32 * ndim
    then every payload in the same order, float64 little-endian

Bit-exact by construction: save -> load -> save reproduces identical
bytes, and loaded parameters reproduce forwards exactly.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .model import HyperParams, ModelParams, param_shapes

MAGIC = b"HNTC"
VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path, params: ModelParams) -> None:
    with open(path, "wb") as fh:
        _write(fh, params)


def _write(fh: BinaryIO, params: ModelParams) -> None:
    fh.write(MAGIC)
    fh.write(struct.pack("<II", VERSION, len(params)))
    for name, tensor in params.items():
        encoded = name.encode("utf-8")
        fh.write(struct.pack("<H", len(encoded)))
        fh.write(encoded)
        fh.write(struct.pack("<B", tensor.ndim))
        fh.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
    for tensor in params.values():
        fh.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())


def load_checkpoint(path, hp: HyperParams | None = None) -> ModelParams:
    """Read a checkpoint; with ``hp`` given, names and shapes must match it."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    offset = 12
    entries = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", data, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", data, offset)
        offset += 4 * ndim
        entries.append((name, shape))
    params: ModelParams = {}
    for name, shape in entries:
        n = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=offset).reshape(shape)
        offset += 8 * n
        params[name] = arr.astype(np.float64).copy()
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    if hp is not None:
        expected = param_shapes(hp)
        got = {name: tuple(int(d) for d in p.shape) for name, p in params.items()}
        want = {name: tuple(shape) for name, shape in expected.items()}
        if got != want:
            raise CheckpointError(
                f"{path}: checkpoint tensors {got} do not match model dims {want}"
            )
    return params
