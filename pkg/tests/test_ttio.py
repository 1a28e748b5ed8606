import io
import struct

import numpy as np
import pytest

from conftest import random_train
from ttkalman import ttio
from ttkalman.tt import COVARIANCE, GAIN, VECTOR, TTNetwork, TTStructureError


@pytest.mark.parametrize("kind,out_dims,in_dims,batch", [
    (VECTOR, [2, 3, 2], [1, 1, 1], 2),
    ("matrix-train", [2, 1, 1], [3, 3, 3], 1),
    (COVARIANCE, [2, 2], [2, 2], 3),
    (GAIN, [2, 2], [3, 1], 2),
])
def test_round_trip_is_bitwise(rng, tmp_path, kind, out_dims, in_dims, batch):
    net = random_train(rng, out_dims, in_dims, [2] * (len(out_dims) - 1), kind=kind, batch=batch)
    path = tmp_path / "net.tt"
    ttio.dump_tt(net, path)
    back = ttio.load_tt(path)
    assert back.kind == kind
    assert back.ranks == net.ranks
    for a, b in zip(net.cores, back.cores):
        assert a.shape == b.shape and np.array_equal(a, b)
    assert ttio.to_bytes(back) == ttio.to_bytes(net)


def test_layout_is_little_endian_header_then_cores():
    c0 = np.arange(4.0).reshape(1, 2, 1, 2)
    c1 = np.array([10.0, 20.0, 30.0, 40.0, 50.0, 60.0]).reshape(2, 3, 1, 1)
    data = ttio.to_bytes(TTNetwork([c0, c1], VECTOR))
    header = struct.unpack("<" + "q" * 10, data[:80])
    assert header == (0, 2, 1, 2, 1, 3, 1, 1, 2, 1)
    floats = struct.unpack("<" + "d" * 10, data[80:])
    assert floats == (0, 1, 2, 3, 10, 20, 30, 40, 50, 60)


def test_truncated_stream(rng):
    data = ttio.to_bytes(random_train(rng, [2, 2], [1, 1], [2]))
    with pytest.raises(EOFError):
        ttio.from_bytes(data[:-3])


def test_bad_tag_and_batch():
    bad = struct.pack("<qqq", 9, 1, 1)
    with pytest.raises(TTStructureError, match="kind tag"):
        ttio.read_tt(io.BytesIO(bad))
    bad = struct.pack("<" + "q" * 7, 1, 1, 2, 1, 1, 3, 1) + b"\0" * 48
    with pytest.raises(TTStructureError, match="batch"):
        ttio.from_bytes(bad)
