"""Binary dump/load of tensor trains and filter checkpoints.

Train layout (all little-endian)::

    int64  kind tag            (0 vector, 1 matrix, 2 covariance, 3 gain)
    int64  d
    int64  batch
    int64  mode sizes          d rows of (o, i)
    int64  ranks               r_0 .. r_d
    float64 cores              core 0 .. core d-1, each (r_left, o, i, r_right), last index fastest
"""

from __future__ import annotations

import io
import os
from typing import BinaryIO

import numpy as np

from .tt import COVARIANCE, GAIN, MATRIX, VECTOR, TTNetwork, TTStructureError

KIND_TAGS = {VECTOR: 0, MATRIX: 1, COVARIANCE: 2, GAIN: 3}
_TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}

_I8 = np.dtype("<i8")
_F8 = np.dtype("<f8")


def _read(f: BinaryIO, dtype: np.dtype, count: int) -> np.ndarray:
    buf = f.read(dtype.itemsize * count)
    if len(buf) != dtype.itemsize * count:
        raise EOFError("truncated tensor-train stream")
    return np.frombuffer(buf, dtype=dtype, count=count)


def write_tt(f: BinaryIO, net: TTNetwork) -> None:
    header = [KIND_TAGS[net.kind], net.d, net.batch]
    for o, i in zip(net.out_dims, net.in_dims):
        header += [o, i]
    header += net.ranks
    f.write(np.asarray(header, dtype=_I8).tobytes())
    for c in net.cores:
        f.write(np.ascontiguousarray(c, dtype=_F8).tobytes())


def read_tt(f: BinaryIO) -> TTNetwork:
    tag, d, batch = (int(v) for v in _read(f, _I8, 3))
    if tag not in _TAG_KINDS:
        raise TTStructureError(f"unknown kind tag {tag}")
    if d < 1:
        raise TTStructureError(f"invalid core count {d}")
    modes = _read(f, _I8, 2 * d).reshape(d, 2)
    ranks = _read(f, _I8, d + 1)
    if ranks[0] != batch:
        raise TTStructureError(f"header batch {batch} disagrees with r_0 = {ranks[0]}")
    cores = []
    for k in range(d):
        shape = (int(ranks[k]), int(modes[k, 0]), int(modes[k, 1]), int(ranks[k + 1]))
        cores.append(_read(f, _F8, int(np.prod(shape))).reshape(shape).astype(np.float64))
    return TTNetwork(cores, _TAG_KINDS[tag])


def dump_tt(net: TTNetwork, path: str | os.PathLike) -> None:
    with open(path, "wb") as f:
        write_tt(f, net)


def load_tt(path: str | os.PathLike) -> TTNetwork:
    with open(path, "rb") as f:
        return read_tt(f)


def to_bytes(net: TTNetwork) -> bytes:
    buf = io.BytesIO()
    write_tt(buf, net)
    return buf.getvalue()


def from_bytes(data: bytes) -> TTNetwork:
    return read_tt(io.BytesIO(data))
