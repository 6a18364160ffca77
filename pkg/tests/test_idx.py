import gzip
import struct

import numpy as np
import pytest

from conftest import requires_mnist
from perceptron_flow.idx import (IDXFormatError, default_data_dir, load_idx, parse_idx, read_idx,
                                 write_idx)


def test_round_trip(tmp_path):
    images = np.random.default_rng(0).integers(0, 256, size=(2, 28, 28), dtype=np.uint8)
    path = tmp_path / "imgs-idx3-ubyte"
    write_idx(path, images)
    assert np.array_equal(read_idx(path, 0x00000803), images)
    labels = np.array([0, 1], dtype=np.uint8)
    write_idx(tmp_path / "labs", labels)
    assert np.array_equal(read_idx(tmp_path / "labs", 0x00000801), labels)


def test_gzip_input(tmp_path):
    arr = np.arange(12, dtype=np.uint8).reshape(3, 4)
    write_idx(tmp_path / "a", arr)
    (tmp_path / "a.gz").write_bytes(gzip.compress((tmp_path / "a").read_bytes()))
    assert np.array_equal(read_idx(tmp_path / "a.gz"), arr)


def test_empty_file(tmp_path):
    (tmp_path / "empty").write_bytes(b"")
    with pytest.raises(IDXFormatError):
        read_idx(tmp_path / "empty")


def test_bad_magic_and_truncation():
    good = struct.pack(">HBB", 0, 8, 1) + struct.pack(">I", 3) + bytes([1, 2, 3])
    assert parse_idx(good).tolist() == [1, 2, 3]
    with pytest.raises(IDXFormatError) as err:
        parse_idx(b"\x01" + good[1:])
    assert err.value.offset == 0
    with pytest.raises(IDXFormatError):
        parse_idx(good[:2] + b"\x0d" + good[3:])  # float payloads are not supported
    with pytest.raises(IDXFormatError) as err:
        parse_idx(good[:-1])
    assert err.value.offset == len(good) - 1
    with pytest.raises(IDXFormatError):
        parse_idx(good[:6])
    with pytest.raises(IDXFormatError):
        parse_idx(good + b"\x00")


def test_wrong_container_type(tmp_path):
    write_idx(tmp_path / "labs", np.zeros(4, dtype=np.uint8))
    with pytest.raises(IDXFormatError):
        read_idx(tmp_path / "labs", 0x00000803)


def test_load_filters_digits(tmp_path):
    images = np.arange(4 * 9, dtype=np.uint8).reshape(4, 3, 3)
    write_idx(tmp_path / "train-images-idx3-ubyte", images)
    write_idx(tmp_path / "train-labels-idx1-ubyte", np.array([3, 1, 0, 7], dtype=np.uint8))
    x, y = load_idx(tmp_path, "train")
    assert y.tolist() == [1, 0]
    assert np.allclose(x, images[[1, 2]] / 255.0)
    with pytest.raises(FileNotFoundError):
        load_idx(tmp_path, "test")


def _count_zero_one(path):
    # standalone reader: skip the 8-byte header of a label file and count bytes
    with open(path, "rb") as fh:
        magic, n = struct.unpack(">II", fh.read(8))
        labels = fh.read()
    assert magic == 0x00000801 and len(labels) == n
    return sum(1 for b in labels if b in (0, 1))


@requires_mnist
def test_official_split_sizes():
    d = default_data_dir()
    x, y = load_idx(d, "train")
    assert x.shape == (12665, 28, 28) and y.size == 12665
    assert _count_zero_one(d / "train-labels-idx1-ubyte") == 12665
    assert x.min() == 0.0 and x.max() == 1.0
    xt, yt = load_idx(d, "test")
    assert yt.size == _count_zero_one(d / "t10k-labels-idx1-ubyte") == 2115
