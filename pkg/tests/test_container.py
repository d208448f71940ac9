import io
import struct

import numpy as np
import pytest

from focusseg.container import load_tensor, read_tensor, save_tensor, tensor_from_bytes, tensor_to_bytes, write_tensor
from focusseg.errors import ContractViolation


@pytest.mark.parametrize("shape", [(), (3,), (2, 3), (1, 2, 3, 4)])
def test_round_trip_is_bitwise(shape, rng):
    a = rng.normal(size=shape)
    b = tensor_from_bytes(tensor_to_bytes(a))
    assert b.shape == a.shape and b.dtype == np.float64
    assert b.tobytes() == a.tobytes()


def test_layout():
    raw = tensor_to_bytes(np.array([[1.0, 2.0]]))
    assert raw[:4] == b"FRNT"
    version, rank = struct.unpack("<HH", raw[4:8])
    assert (version, rank) == (1, 2)
    assert struct.unpack("<QQ", raw[8:24]) == (1, 2)
    assert np.frombuffer(raw[24:], "<f8").tolist() == [1.0, 2.0]


def test_stream_of_several(rng):
    buf = io.BytesIO()
    arrays = [rng.normal(size=(2, 2)), rng.normal(size=(5,))]
    for a in arrays:
        write_tensor(buf, a)
    buf.seek(0)
    for a in arrays:
        np.testing.assert_array_equal(read_tensor(buf), a)


def test_file_round_trip(tmp_path, rng):
    a = rng.normal(size=(3, 1, 2))
    save_tensor(tmp_path / "t.frnt", a)
    np.testing.assert_array_equal(load_tensor(tmp_path / "t.frnt"), a)


def test_bad_magic_and_truncation():
    raw = tensor_to_bytes(np.ones(4))
    with pytest.raises(ContractViolation):
        tensor_from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ContractViolation):
        tensor_from_bytes(raw[:-3])
