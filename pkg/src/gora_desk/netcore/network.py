"""Feedforward network with exact reverse-mode gradients for every base weight.

Forward is x @ W with W shaped (in_dim, out_dim). When an adapter registry is
supplied, layer l uses the effective weight W0 + s * A @ B, computed in
factored form, and the returned gradients are taken with respect to that
effective weight. W0 itself is never written.
"""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..errors import NonFiniteError, ShapeMismatchError
from ..numerics import Matrix, Rng, sample_kaiming_uniform

if TYPE_CHECKING:
    from ..adapter.state import AdapterState

logger = logging.getLogger(__name__)


class Activation(str, Enum):
    """Element-wise activation applied after a layer."""

    LINEAR = "linear"
    RELU = "relu"
    TANH = "tanh"


class LossKind(str, Enum):
    """Scalar training objective, always averaged over the batch."""

    MSE = "mse"
    SOFTMAX_CROSS_ENTROPY = "softmax_cross_entropy"


class LayerSpec(BaseModel):
    """Shape and role of one dense layer."""

    model_config = ConfigDict(frozen=True)

    in_dim: int = Field(ge=1)
    out_dim: int = Field(ge=1)
    activation: Activation = Activation.LINEAR
    adapt: bool = True


@dataclass
class Layer:
    spec: LayerSpec
    weight: Matrix
    bias: np.ndarray | None = None


@dataclass
class Network:
    """Ordered stack of dense layers plus a loss.

    Attributes:
        layers: Layers in forward order.
        loss: Objective applied to the last layer's output.
    """

    layers: list[Layer]
    loss: LossKind = LossKind.MSE
    frozen: bool = field(default=False, init=False)

    def __post_init__(self) -> None:
        if not self.layers:
            raise ShapeMismatchError("network needs at least one layer")
        for index, layer in enumerate(self.layers):
            expected = (layer.spec.in_dim, layer.spec.out_dim)
            if layer.weight.shape != expected:
                raise ShapeMismatchError(
                    f"layer {index}: weight shape {layer.weight.shape} "
                    f"does not match spec {expected}"
                )
            if layer.bias is not None and layer.bias.shape != (layer.spec.out_dim,):
                raise ShapeMismatchError(
                    f"layer {index}: bias shape {layer.bias.shape} "
                    f"does not match out_dim {layer.spec.out_dim}"
                )
            if index and self.layers[index - 1].spec.out_dim != layer.spec.in_dim:
                raise ShapeMismatchError(
                    f"layer {index}: in_dim {layer.spec.in_dim} does not chain with "
                    f"previous out_dim {self.layers[index - 1].spec.out_dim}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].spec.in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].spec.out_dim

    @property
    def specs(self) -> list[LayerSpec]:
        return [layer.spec for layer in self.layers]

    @property
    def weights(self) -> list[Matrix]:
        return [layer.weight for layer in self.layers]

    def target_layers(self) -> list[int]:
        """Indices of layers that may receive an adapter."""
        return [i for i, layer in enumerate(self.layers) if layer.spec.adapt]

    def freeze(self) -> Network:
        """Mark every base weight and bias read-only."""
        for layer in self.layers:
            layer.weight.setflags(write=False)
            if layer.bias is not None:
                layer.bias.setflags(write=False)
        self.frozen = True
        return self


@dataclass
class Batch:
    """One mini-batch. Targets are a dense matrix (one-hot for classification)."""

    inputs: Matrix
    targets: Matrix

    def __post_init__(self) -> None:
        if self.inputs.ndim != 2 or self.targets.ndim != 2:
            raise ShapeMismatchError(
                f"batch arrays must be 2-D, got {self.inputs.shape} and "
                f"{self.targets.shape}"
            )
        if self.inputs.shape[0] < 1 or self.inputs.shape[0] != self.targets.shape[0]:
            raise ShapeMismatchError(
                f"batch rows disagree: inputs {self.inputs.shape}, "
                f"targets {self.targets.shape}"
            )

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


def build_network(
    rng: Rng,
    specs: list[LayerSpec],
    loss: LossKind = LossKind.MSE,
    bias: bool = False,
) -> Network:
    """Kaiming-uniform base network for the given layer specs."""
    layers = []
    for index, spec in enumerate(specs):
        weight = sample_kaiming_uniform(
            rng.spawn("base_weight", index), spec.in_dim, spec.out_dim, spec.in_dim
        )
        layer_bias = None
        if bias:
            layer_bias = sample_kaiming_uniform(
                rng.spawn("base_bias", index), 1, spec.out_dim, spec.in_dim
            ).ravel()
        layers.append(Layer(spec=spec, weight=weight, bias=layer_bias))
    return Network(layers=layers, loss=loss)


def _activate(z: Matrix, activation: Activation) -> Matrix:
    if activation is Activation.RELU:
        return np.maximum(z, 0.0)
    if activation is Activation.TANH:
        return np.tanh(z)
    return z


def _activation_grad(z: Matrix, h: Matrix, activation: Activation) -> Matrix:
    if activation is Activation.RELU:
        return (z > 0.0).astype(np.float64)
    if activation is Activation.TANH:
        return 1.0 - h * h
    return np.ones_like(z)


def _check_batch(net: Network, batch: Batch) -> None:
    if batch.inputs.shape[1] != net.in_dim:
        raise ShapeMismatchError(
            f"batch inputs {batch.inputs.shape} do not match network in_dim {net.in_dim}"
        )
    if batch.targets.shape[1] != net.out_dim:
        raise ShapeMismatchError(
            f"batch targets {batch.targets.shape} do not match network "
            f"out_dim {net.out_dim}"
        )


def _check_adapters(net: Network, adapters: Mapping[int, AdapterState]) -> None:
    for index, adapter in adapters.items():
        if not 0 <= index < len(net.layers):
            raise ShapeMismatchError(f"adapter for unknown layer {index}")
        spec = net.layers[index].spec
        if (adapter.m, adapter.n) != (spec.in_dim, spec.out_dim):
            raise ShapeMismatchError(
                f"layer {index}: adapter ({adapter.m}, {adapter.n}) does not match "
                f"weight ({spec.in_dim}, {spec.out_dim})"
            )


def _forward(
    net: Network, x: Matrix, adapters: Mapping[int, AdapterState]
) -> tuple[list[Matrix], list[Matrix]]:
    """Return the layer inputs and pre-activations of every layer."""
    hs = [x]
    zs = []
    h = x
    for index, layer in enumerate(net.layers):
        z = h @ layer.weight
        adapter = adapters.get(index)
        if adapter is not None:
            z = z + adapter.scale * ((h @ adapter.A) @ adapter.B)
        if layer.bias is not None:
            z = z + layer.bias
        zs.append(z)
        h = _activate(z, layer.spec.activation)
        hs.append(h)
    return hs, zs


def _log_softmax(logits: Matrix) -> Matrix:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _loss_and_grad(
    kind: LossKind, output: Matrix, targets: Matrix
) -> tuple[float, Matrix]:
    batch_size = output.shape[0]
    if kind is LossKind.MSE:
        residual = output - targets
        loss = float(np.sum(residual * residual) / batch_size)
        return loss, 2.0 * residual / batch_size
    log_probs = _log_softmax(output)
    loss = float(-np.sum(targets * log_probs) / batch_size)
    return loss, (np.exp(log_probs) - targets) / batch_size


def predict(
    net: Network, inputs: Matrix, adapters: Mapping[int, AdapterState] | None = None
) -> Matrix:
    """Network output for a batch of inputs."""
    adapters = adapters or {}
    hs, _ = _forward(net, inputs, adapters)
    return hs[-1]


def evaluate_loss(
    net: Network, batch: Batch, adapters: Mapping[int, AdapterState] | None = None
) -> float:
    """Forward-only mean batch loss.

    Raises:
        NonFiniteError: If the loss is NaN or infinite.
    """
    adapters = adapters or {}
    _check_batch(net, batch)
    _check_adapters(net, adapters)
    hs, _ = _forward(net, batch.inputs, adapters)
    loss, _ = _loss_and_grad(net.loss, hs[-1], batch.targets)
    if not np.isfinite(loss):
        raise NonFiniteError(f"non-finite loss {loss} in forward pass")
    return loss


def accuracy(
    net: Network, batch: Batch, adapters: Mapping[int, AdapterState] | None = None
) -> float:
    """Fraction of rows whose argmax output matches the argmax target."""
    output = predict(net, batch.inputs, adapters)
    return float(np.mean(output.argmax(axis=1) == batch.targets.argmax(axis=1)))


def forward_backward(
    net: Network,
    batch: Batch,
    adapters: Mapping[int, AdapterState] | None = None,
) -> tuple[float, list[Matrix]]:
    """Mean batch loss and its exact gradient for every layer weight.

    Args:
        net: Network whose weights are read, never written.
        batch: Inputs and targets.
        adapters: Optional registry keyed by layer index. Adapted layers use
            W0 + s * A @ B and the returned gradient is dL/d(effective weight).

    Returns:
        (loss, grads) where grads[l] has the shape of layer l's weight.

    Raises:
        ShapeMismatchError: If the batch or adapters do not fit the network.
        NonFiniteError: If the loss or any gradient is not finite.
    """
    adapters = adapters or {}
    _check_batch(net, batch)
    _check_adapters(net, adapters)

    hs, zs = _forward(net, batch.inputs, adapters)
    loss, upstream = _loss_and_grad(net.loss, hs[-1], batch.targets)
    if not np.isfinite(loss):
        raise NonFiniteError(f"non-finite loss {loss} in forward pass")

    grads: list[Matrix] = [np.empty(0)] * len(net.layers)
    for index in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[index]
        delta = upstream * _activation_grad(
            zs[index], hs[index + 1], layer.spec.activation
        )
        grads[index] = hs[index].T @ delta
        if index:
            upstream = delta @ layer.weight.T
            adapter = adapters.get(index)
            if adapter is not None:
                upstream = upstream + adapter.scale * ((delta @ adapter.B.T) @ adapter.A.T)

    for index, grad in enumerate(grads):
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"non-finite gradient for layer {index}")
    return loss, grads
