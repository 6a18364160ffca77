"""IDX container reader/writer and MNIST acquisition.

IDX layout: two zero bytes, a type code (0x08 = unsigned byte), the number of
dimensions, then one big-endian uint32 per dimension, then the payload in
C order.
"""

from __future__ import annotations

import gzip
import hashlib
import io
import logging
import os
import shutil
import struct
import tarfile
import tempfile
import urllib.request
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

# md5 of the uncompressed canonical files
RAW_MD5 = {
    "train-images-idx3-ubyte": "6bbc9ace898e44ae57da46a324031adb",
    "train-labels-idx1-ubyte": "a25bea736e30d166cdddb491f175f624",
    "t10k-images-idx3-ubyte": "2646ac647ad5339dbf082846283269ea",
    "t10k-labels-idx1-ubyte": "27ae3e4e09519cfbb04c329615203637",
}

GZ_MIRRORS = [
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
    "http://yann.lecun.com/exdb/mnist/",
]
GZ_MD5 = {
    "train-images-idx3-ubyte": "f68b3c2dcbeaaa9fbdd348bbdeb94873",
    "train-labels-idx1-ubyte": "d53e105ee54ea40749a09fcbcd1e9432",
    "t10k-images-idx3-ubyte": "9fb629c4189551a2d022fa330f9573f3",
    "t10k-labels-idx1-ubyte": "ec29112dd5afa0611ce80d1b7f02629c",
}

# Source distribution on PyPI that ships the four uncompressed files.
PYPI_ARCHIVE = (
    "https://files.pythonhosted.org/packages/be/d1/"
    "6db83a78917574d10bdbfa61c1d563300770d643735f6cf355a6f9adcabe/MNIST_dir-0.2.tar.gz"
)
PYPI_ARCHIVE_SHA256 = "174621ea86e24ebe98d24594d3c26aa206ae51419f0dbf2b750c296603597eee"

DATA_ENV = "PERCEPTRON_FLOW_DATA"


class IDXFormatError(ValueError):
    def __init__(self, msg, offset):
        super().__init__(f"{msg} (byte offset {offset})")
        self.offset = offset


def parse_idx(data: bytes) -> np.ndarray:
    """Parse an unsigned-byte IDX payload into an array."""
    if len(data) < 4:
        raise IDXFormatError("file too short for the magic number", len(data))
    zero, dtype_code, ndim = struct.unpack(">HBB", data[:4])
    if zero != 0:
        raise IDXFormatError("bad magic: leading bytes must be zero", 0)
    if dtype_code != 0x08:
        raise IDXFormatError(f"unsupported element type 0x{dtype_code:02x}", 2)
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IDXFormatError("truncated dimension header", len(data))
    dims = struct.unpack(f">{ndim}I", data[4:header])
    count = int(np.prod(dims)) if dims else 1
    if len(data) < header + count:
        raise IDXFormatError(f"truncated payload: expected {count} bytes", len(data))
    if len(data) > header + count:
        raise IDXFormatError("trailing bytes after payload", header + count)
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=header).reshape(dims)


def read_idx(path, expected_magic: int | None = None) -> np.ndarray:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        data = fh.read()
    if expected_magic is not None and len(data) >= 4:
        magic = struct.unpack(">I", data[:4])[0]
        if magic != expected_magic:
            raise IDXFormatError(f"magic 0x{magic:08x}, expected 0x{expected_magic:08x}", 0)
    return parse_idx(data)


def write_idx(path, array) -> None:
    array = np.ascontiguousarray(array, dtype=np.uint8)
    header = struct.pack(">HBB", 0, 0x08, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.tobytes())


def default_data_dir() -> Path:
    env = os.environ.get(DATA_ENV)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "perceptron_flow" / "mnist"


def _resolve(data_dir, name: str) -> Path:
    base = Path(data_dir)
    for candidate in (base / name, base / (name + ".gz"), base / name.replace("-idx", ".idx")):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"{name} not found in {base}; run the mnist fetch step first")


def load_idx(data_dir=None, split: str = "train", digits=(0, 1)):
    """Images scaled to [0, 1] and labels, restricted to ``digits``."""
    data_dir = default_data_dir() if data_dir is None else Path(data_dir)
    images = read_idx(_resolve(data_dir, FILES[f"{split}_images"]), IMAGES_MAGIC)
    labels = read_idx(_resolve(data_dir, FILES[f"{split}_labels"]), LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise ValueError("image and label counts differ")
    keep = np.isin(labels, digits)
    return images[keep].astype(float) / 255.0, labels[keep].astype(int)


def _md5(data: bytes) -> str:
    return hashlib.md5(data).hexdigest()


def _download(url: str, timeout: float = 60.0) -> bytes:
    with urllib.request.urlopen(url, timeout=timeout) as resp:
        return resp.read()


def _have_all(dest: Path) -> bool:
    return all((dest / name).exists() and _md5((dest / name).read_bytes()) == md5
               for name, md5 in RAW_MD5.items())


def fetch_mnist(dest=None, timeout: float = 60.0) -> Path:
    """Download and verify the MNIST files into ``dest`` (idempotent).

    Tries the canonical gzip mirrors first, then a PyPI-hosted archive of the
    uncompressed files. Every file is checked against its md5.
    """
    dest = default_data_dir() if dest is None else Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    if _have_all(dest):
        return dest
    missing = [n for n in RAW_MD5 if not (dest / n).exists()]
    for name in list(missing):
        for mirror in GZ_MIRRORS:
            try:
                blob = _download(mirror + name + ".gz", timeout)
            except OSError as exc:
                log.info("mirror %s failed: %s", mirror, exc)
                continue
            if _md5(blob) != GZ_MD5[name]:
                log.warning("checksum mismatch for %s from %s", name, mirror)
                continue
            (dest / name).write_bytes(gzip.decompress(blob))
            missing.remove(name)
            break
    if missing:
        blob = _download(PYPI_ARCHIVE, timeout)
        if hashlib.sha256(blob).hexdigest() != PYPI_ARCHIVE_SHA256:
            raise IOError("checksum mismatch for the PyPI MNIST archive")
        with tarfile.open(fileobj=io.BytesIO(blob), mode="r:gz") as tar:
            for member in tar.getmembers():
                base = os.path.basename(member.name)
                stem = base.replace(".idx", "-idx")
                if stem in missing and not base.startswith("._"):
                    with tempfile.NamedTemporaryFile(dir=dest, delete=False) as tmp:
                        shutil.copyfileobj(tar.extractfile(member), tmp)
                    os.replace(tmp.name, dest / stem)
    for name, md5 in RAW_MD5.items():
        if _md5((dest / name).read_bytes()) != md5:
            raise IOError(f"checksum mismatch for {name}")
    return dest
