"""Datasets: IDX (MNIST container) files, binarization and synthetic generators."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# IDX element type codes -> big-endian numpy dtypes
_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {v: k for k, v in _IDX_TYPES.items()}


class IdxFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class Dataset:
    data: np.ndarray
    split: str = "train"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2:
            raise ValueError("dataset must be a 2-D matrix (examples x visible units)")
        if not np.all((self.data == 0) | (self.data == 1)):
            raise ValueError("dataset values must be binary")
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def n_visible(self) -> int:
        return self.data.shape[1]


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def parse_idx(raw: bytes) -> np.ndarray:
    """Decode an IDX byte string into an array with its stored shape and dtype."""
    if len(raw) < 4:
        raise IdxFormatError("truncated magic number", len(raw))
    if raw[0] != 0 or raw[1] != 0:
        raise IdxFormatError(f"bad magic number 0x{raw[:4].hex()}", 0)
    code, ndim = raw[2], raw[3]
    if code not in _IDX_TYPES:
        raise IdxFormatError(f"unknown element type 0x{code:02x}", 2)
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise IdxFormatError("truncated dimension header", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    dtype = _IDX_TYPES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    payload = raw[header_end:]
    if len(payload) < expected:
        raise IdxFormatError(f"payload has {len(payload)} bytes, expected {expected}", len(raw))
    if len(payload) > expected:
        raise IdxFormatError("trailing bytes after payload", header_end + expected)
    return np.frombuffer(payload, dtype=dtype).reshape(dims)


def load_idx(path, return_dims: bool = False):
    """Read an IDX file as a real matrix with one row per item.

    Unsigned-byte payloads (images, magic ``0x00000803``) are scaled to
    ``[0, 1]``; other element types are returned as floats unchanged.  A
    1-D file (labels, ``0x00000801``) comes back as a vector.
    """
    arr = parse_idx(_read_bytes(path))
    dims = arr.shape
    out = arr.astype(np.float64)
    if arr.dtype == np.dtype(">u1"):
        out /= 255.0
    if arr.ndim > 1:
        out = out.reshape(dims[0], -1)
    return (out, dims) if return_dims else out


def write_idx(path, matrix: np.ndarray, dims: tuple[int, ...] | None = None,
              dtype=np.dtype(">u1")) -> None:
    """Inverse of :func:`load_idx` for the given element type."""
    dtype = np.dtype(dtype).newbyteorder(">")
    matrix = np.asarray(matrix, dtype=float)
    dims = tuple(matrix.shape) if dims is None else tuple(dims)
    values = matrix * 255.0 if dtype == np.dtype(">u1") else matrix
    if dtype.kind in "iu":
        values = np.rint(values)
    payload = values.reshape(dims).astype(dtype).tobytes()
    header = bytes([0, 0, _IDX_CODES[dtype], len(dims)]) + struct.pack(f">{len(dims)}I", *dims)
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(header + payload)


def binarize(matrix: np.ndarray, threshold: float = 0.5, split: str = "train") -> Dataset:
    """``x >= threshold -> 1``, else ``0``."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.size and (matrix.min() < 0 or matrix.max() > 1):
        raise ValueError("values must lie in [0, 1] before binarization")
    return Dataset((matrix >= threshold).astype(float), split)


def bars_stripes_patterns(rows: int, cols: int) -> np.ndarray:
    """All stripe patterns (rows on/off) followed by all bar patterns (columns on/off).

    The blank and full images appear once in each family, so there are
    ``2^rows + 2^cols`` entries but ``2^rows + 2^cols - 2`` distinct images.
    """
    out = []
    for mask in range(2 ** rows):
        on = (mask >> np.arange(rows)) & 1
        out.append(np.repeat(on[:, None], cols, axis=1).ravel())
    for mask in range(2 ** cols):
        on = (mask >> np.arange(cols)) & 1
        out.append(np.repeat(on[None, :], rows, axis=0).ravel())
    return np.array(out, dtype=float)


def synthetic_dataset(kind: str, size: int, seed: int = 0, shape: tuple[int, int] = (3, 4),
                      p: float = 0.5, n_visible: int | None = None, split: str = "train") -> Dataset:
    """Seeded desk-scale data.

    ``bars_stripes``: pick horizontal or vertical with equal probability,
    then switch each row (or column) on with probability 1/2.
    ``random_bernoulli``: i.i.d. ``Bernoulli(p)`` pixels.
    """
    if size < 1:
        raise ValueError("size must be >= 1")
    rng = np.random.default_rng(seed)
    rows, cols = shape
    if kind == "bars_stripes":
        horizontal = rng.random(size) < 0.5
        lines = rng.random((size, max(rows, cols))) < 0.5
        out = np.empty((size, rows * cols))
        for i in range(size):
            if horizontal[i]:
                img = np.repeat(lines[i, :rows, None], cols, axis=1)
            else:
                img = np.repeat(lines[i, None, :cols], rows, axis=0)
            out[i] = img.ravel()
        return Dataset(out, split)
    if kind == "random_bernoulli":
        n = rows * cols if n_visible is None else n_visible
        return Dataset((rng.random((size, n)) < p).astype(float), split)
    raise ValueError(f"unknown synthetic dataset kind {kind!r}")
