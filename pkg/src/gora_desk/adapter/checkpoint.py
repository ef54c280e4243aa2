"""GADP adapter checkpoints.

A checkpoint is a sequence of records read until end of file:
magic b"GADP", u32 layer, u32 rank, f64 alpha, u8 mode, u8 freeze_A, then A
and B as GMAT blocks. Base weights are never written.
"""

import io
import logging
import struct
from pathlib import Path
from typing import BinaryIO

from ..errors import ArtifactFormatError
from ..numerics.gmat import read_exact, read_matrix, write_matrix
from .state import AdapterSet, AdapterState, ScalingMode

logger = logging.getLogger(__name__)

MAGIC = b"GADP"
_RECORD = struct.Struct("<IIdBB")
_MODES = list(ScalingMode)


def write_adapters(stream: BinaryIO, adapters: AdapterSet) -> None:
    """Write every adapter in ascending layer order."""
    for layer in sorted(adapters):
        ad = adapters[layer]
        stream.write(MAGIC)
        stream.write(
            _RECORD.pack(
                layer, ad.rank, float(ad.alpha), _MODES.index(ad.mode), int(ad.freeze_A)
            )
        )
        write_matrix(stream, ad.A)
        write_matrix(stream, ad.B)


def read_adapters(stream: BinaryIO) -> AdapterSet:
    """Read records until end of file."""
    adapters: AdapterSet = {}
    while True:
        magic = stream.read(len(MAGIC))
        if not magic:
            break
        if magic != MAGIC:
            raise ArtifactFormatError(f"bad magic: expected {MAGIC!r}, found {magic!r}")
        layer, rank, alpha, mode_code, freeze = _RECORD.unpack(
            read_exact(stream, _RECORD.size, "GADP record header")
        )
        if mode_code >= len(_MODES):
            raise ArtifactFormatError(f"unknown scaling mode code {mode_code}")
        a = read_matrix(stream)
        b = read_matrix(stream)
        if a.shape[1] != rank:
            raise ArtifactFormatError(
                f"layer {layer}: header rank {rank} disagrees with A {a.shape}"
            )
        if layer in adapters:
            raise ArtifactFormatError(f"duplicate adapter record for layer {layer}")
        adapters[layer] = AdapterState(
            A=a, B=b, alpha=alpha, mode=_MODES[mode_code], freeze_A=bool(freeze)
        )
    return adapters


def save_adapters(path: Path, adapters: AdapterSet) -> None:
    with open(path, "wb") as f:
        write_adapters(f, adapters)
    logger.debug(
        f"Saved {len(adapters)} adapters",
        extra={"result": {"path": str(path), "layers": sorted(adapters)}},
    )


def load_adapters(path: Path) -> AdapterSet:
    with open(path, "rb") as f:
        return read_adapters(f)


def adapter_bytes(adapters: AdapterSet) -> bytes:
    """The exact checkpoint bytes for an adapter set."""
    buffer = io.BytesIO()
    write_adapters(buffer, adapters)
    return buffer.getvalue()
