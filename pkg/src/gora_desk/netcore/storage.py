"""GNET (network) and GBAT (batch list) containers built from GMAT blocks."""

import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from ..errors import ArtifactFormatError
from ..numerics.gmat import expect_magic, read_exact, read_matrix, write_matrix
from .network import Activation, Batch, Layer, LayerSpec, LossKind, Network

NETWORK_MAGIC = b"GNET"
BATCHES_MAGIC = b"GBAT"

_ACTIVATIONS = list(Activation)
_LOSSES = list(LossKind)
_COUNT = struct.Struct("<I")
_NET_HEADER = struct.Struct("<IB")
_LAYER_HEADER = struct.Struct("<IIBBB")


def _code(members: list, value, what: str) -> int:
    try:
        return members.index(value)
    except ValueError as e:
        raise ArtifactFormatError(f"cannot encode {what} {value!r}") from e


def _member(members: list, code: int, what: str):
    if code >= len(members):
        raise ArtifactFormatError(f"unknown {what} code {code}")
    return members[code]


def write_network(stream: BinaryIO, net: Network) -> None:
    """Serialize layer specs, base weights and biases."""
    stream.write(NETWORK_MAGIC)
    stream.write(_NET_HEADER.pack(len(net.layers), _code(_LOSSES, net.loss, "loss")))
    for layer in net.layers:
        spec = layer.spec
        stream.write(
            _LAYER_HEADER.pack(
                spec.in_dim,
                spec.out_dim,
                _code(_ACTIVATIONS, spec.activation, "activation"),
                int(spec.adapt),
                int(layer.bias is not None),
            )
        )
        write_matrix(stream, layer.weight)
        if layer.bias is not None:
            write_matrix(stream, layer.bias.reshape(1, -1))


def read_network(stream: BinaryIO) -> Network:
    """Inverse of write_network. The returned network is not frozen."""
    expect_magic(stream, NETWORK_MAGIC)
    n_layers, loss_code = _NET_HEADER.unpack(
        read_exact(stream, _NET_HEADER.size, "GNET header")
    )
    layers = []
    for _ in range(n_layers):
        in_dim, out_dim, act_code, adapt, has_bias = _LAYER_HEADER.unpack(
            read_exact(stream, _LAYER_HEADER.size, "GNET layer header")
        )
        spec = LayerSpec(
            in_dim=in_dim,
            out_dim=out_dim,
            activation=_member(_ACTIVATIONS, act_code, "activation"),
            adapt=bool(adapt),
        )
        weight = read_matrix(stream)
        bias = read_matrix(stream).ravel() if has_bias else None
        layers.append(Layer(spec=spec, weight=weight, bias=bias))
    return Network(layers=layers, loss=_member(_LOSSES, loss_code, "loss"))


def write_batches(stream: BinaryIO, batches: list[Batch]) -> None:
    """Serialize a batch list as count followed by (inputs, targets) pairs."""
    stream.write(BATCHES_MAGIC)
    stream.write(_COUNT.pack(len(batches)))
    for batch in batches:
        write_matrix(stream, batch.inputs)
        write_matrix(stream, batch.targets)


def read_batches(stream: BinaryIO) -> list[Batch]:
    """Inverse of write_batches."""
    expect_magic(stream, BATCHES_MAGIC)
    (count,) = _COUNT.unpack(read_exact(stream, _COUNT.size, "GBAT count"))
    batches = []
    for _ in range(count):
        inputs = read_matrix(stream)
        targets = read_matrix(stream)
        batches.append(Batch(inputs=inputs, targets=targets))
    return batches


def save_network(path: Path, net: Network) -> None:
    with open(path, "wb") as f:
        write_network(f, net)


def load_network(path: Path) -> Network:
    with open(path, "rb") as f:
        return read_network(f)


def save_batches(path: Path, batches: list[Batch]) -> None:
    with open(path, "wb") as f:
        write_batches(f, batches)


def load_batches(path: Path) -> list[Batch]:
    with open(path, "rb") as f:
        return read_batches(f)


def same_weights(a: Network, b: Network) -> bool:
    """Bitwise equality of every base weight and bias."""
    if len(a.layers) != len(b.layers):
        return False
    for left, right in zip(a.layers, b.layers, strict=True):
        if left.weight.tobytes() != right.weight.tobytes():
            return False
        if (left.bias is None) != (right.bias is None):
            return False
        if left.bias is not None and not np.array_equal(left.bias, right.bias):
            return False
    return True
