"""GMAT binary matrix container.

Layout: magic b"GMAT", u32 rows, u32 cols (little-endian), then rows*cols
little-endian f64 values in row-major order. Every other artifact embeds
matrices as GMAT blocks.
"""

import struct
from typing import BinaryIO

import numpy as np

from ..errors import ArtifactFormatError
from .linalg import Matrix, as_matrix

MAGIC = b"GMAT"
_DIMS = struct.Struct("<II")


def read_exact(stream: BinaryIO, n_bytes: int, what: str) -> bytes:
    """Read exactly n_bytes or raise ArtifactFormatError."""
    payload = stream.read(n_bytes)
    if len(payload) != n_bytes:
        raise ArtifactFormatError(
            f"truncated {what}: expected {n_bytes} bytes, got {len(payload)}"
        )
    return payload


def expect_magic(stream: BinaryIO, magic: bytes) -> None:
    """Consume and check a 4-byte container magic."""
    found = read_exact(stream, len(magic), f"{magic.decode()} header")
    if found != magic:
        raise ArtifactFormatError(f"bad magic: expected {magic!r}, found {found!r}")


def encode_matrix(matrix: Matrix) -> bytes:
    """Serialize a 2-D matrix into a GMAT block."""
    matrix = as_matrix(matrix)
    rows, cols = matrix.shape
    data = np.ascontiguousarray(matrix, dtype="<f8").tobytes()
    return MAGIC + _DIMS.pack(rows, cols) + data


def write_matrix(stream: BinaryIO, matrix: Matrix) -> int:
    """Write one GMAT block, returning the number of bytes written."""
    payload = encode_matrix(matrix)
    stream.write(payload)
    return len(payload)


def read_matrix(stream: BinaryIO) -> Matrix:
    """Read one GMAT block from a binary stream."""
    expect_magic(stream, MAGIC)
    rows, cols = _DIMS.unpack(read_exact(stream, _DIMS.size, "GMAT dimensions"))
    data = read_exact(stream, rows * cols * 8, f"GMAT {rows}x{cols} payload")
    return np.frombuffer(data, dtype="<f8").astype(np.float64).reshape(rows, cols)


def decode_matrix(payload: bytes) -> Matrix:
    """Decode a single GMAT block; trailing bytes are rejected."""
    header = len(MAGIC) + _DIMS.size
    if len(payload) < header or payload[: len(MAGIC)] != MAGIC:
        raise ArtifactFormatError("payload does not start with a GMAT header")
    rows, cols = _DIMS.unpack(payload[len(MAGIC) : header])
    expected = header + rows * cols * 8
    if len(payload) != expected:
        raise ArtifactFormatError(
            f"GMAT {rows}x{cols} block should be {expected} bytes, got {len(payload)}"
        )
    return np.frombuffer(payload[header:], dtype="<f8").astype(np.float64).reshape(
        rows, cols
    )
