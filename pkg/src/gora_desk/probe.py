"""Gradient probe: N-batch averaged base-weight gradients before training.

The probe runs forward/backward on the frozen network, adds each target
layer's gradient into a host accumulation buffer and discards everything
else. No optimizer state exists at any point. With `adaptive` set, the probe
stops once the normalized layer importances move by less than the
convergence threshold (L-infinity) between consecutive steps.
"""

import logging
import math
import struct
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import BinaryIO

import numpy as np
from pydantic import BaseModel, Field

from .allocate import ImportanceMetric, importance
from .errors import (
    ArtifactFormatError,
    ConfigError,
    EmptyStreamError,
    HostBufferError,
    NonFiniteError,
    ShapeMismatchError,
)
from .netcore import Batch, Network, forward_backward
from .numerics import Matrix
from .numerics.gmat import expect_magic, read_exact, read_matrix, write_matrix

logger = logging.getLogger(__name__)

NORMALIZATION_TOLERANCE = 1e-9


class ImportanceSource(str, Enum):
    """Which gradient feeds the adaptive-N importance trace."""

    RUNNING_MEAN = "running_mean"
    LAST_BATCH = "last_batch"


class ProbeConfig(BaseModel):
    max_steps: int = Field(default=64, ge=1)
    adaptive: bool = False
    convergence_threshold: float = Field(default=0.01, gt=0)
    offload: bool = True
    importance_source: ImportanceSource = ImportanceSource.RUNNING_MEAN
    metric: ImportanceMetric = ImportanceMetric.SENSITIVITY


class HostBuffer:
    """Accumulation arena standing in for host memory, with a byte ledger.

    Each layer owns exactly one slot. Allocating a slot that already exists
    raises, which is how the single-copy property is enforced.
    """

    def __init__(self) -> None:
        self._slots: dict[int, Matrix] = {}
        self.allocated_bytes = 0
        self.peak_bytes = 0

    def __contains__(self, layer: int) -> bool:
        return layer in self._slots

    def allocate(self, layer: int, shape: tuple[int, int]) -> None:
        if layer in self._slots:
            raise HostBufferError(f"layer {layer} already has a host buffer slot")
        self._slots[layer] = np.zeros(shape, dtype=np.float64)
        self.allocated_bytes += self._slots[layer].nbytes
        self.peak_bytes = max(self.peak_bytes, self.allocated_bytes)

    def accumulate(self, layer: int, grad: Matrix) -> None:
        """Add grad into the layer's slot, allocating on first use."""
        if layer not in self._slots:
            self.allocate(layer, grad.shape)
        slot = self._slots[layer]
        if slot.shape != grad.shape:
            raise ShapeMismatchError(
                f"layer {layer}: gradient {grad.shape} does not match slot {slot.shape}"
            )
        slot += grad

    def total(self, layer: int) -> Matrix:
        return self._slots[layer]

    def mean(self, layer: int, count: int) -> Matrix:
        return self._slots[layer] / count

    def release(self, layer: int) -> None:
        slot = self._slots.pop(layer)
        self.allocated_bytes -= slot.nbytes

    @property
    def layers(self) -> list[int]:
        return sorted(self._slots)


@dataclass
class ProbeResult:
    """Averaged gradients plus accumulation metadata.

    Attributes:
        grads: Mean gradient G per target layer index.
        steps_used: Accumulation steps taken (rounds, for the distributed probe).
        batches_consumed: Batches read from the stream.
        importance_trace: Normalized importances after every step.
        threshold: Convergence threshold in effect.
        adaptive: Whether early stopping was enabled.
        peak_host_bytes: Peak bytes held by the host buffer (0 without offload).
    """

    grads: dict[int, Matrix]
    steps_used: int
    batches_consumed: int
    importance_trace: list[list[float]] = field(default_factory=list)
    threshold: float = 0.01
    adaptive: bool = False
    peak_host_bytes: int = 0

    @property
    def layers(self) -> list[int]:
        return sorted(self.grads)


def adaptive_stop_check(
    prev_importances: Sequence[float],
    cur_importances: Sequence[float],
    threshold: float,
) -> bool:
    """True iff max_l |prev_l - cur_l| < threshold (strict).

    Raises:
        ShapeMismatchError: If the vectors differ in length.
        ConfigError: If either vector is not normalized to sum 1.
    """
    if len(prev_importances) != len(cur_importances):
        raise ShapeMismatchError(
            f"importance vectors differ in length: "
            f"{len(prev_importances)} vs {len(cur_importances)}"
        )
    for name, values in (("previous", prev_importances), ("current", cur_importances)):
        if abs(math.fsum(values) - 1.0) > NORMALIZATION_TOLERANCE:
            raise ConfigError(
                f"{name} importances are not normalized (sum={math.fsum(values)!r})"
            )
    distance = max(
        (abs(a - b) for a, b in zip(prev_importances, cur_importances, strict=True)),
        default=0.0,
    )
    return distance < threshold


class ProbeAccumulator:
    """Running sum of target-layer gradients and the importance trace.

    Shared by the single-worker and the distributed probe so both add
    gradients in exactly the same way.
    """

    def __init__(
        self, net: Network, cfg: ProbeConfig, buffer: HostBuffer | None = None
    ):
        self.net = net
        self.cfg = cfg
        self.buffer = buffer or HostBuffer()
        self.targets = net.target_layers()
        if not self.targets:
            raise ConfigError("network has no layers marked for adaptation")
        self.count = 0
        self.steps = 0
        self.trace: list[list[float]] = []

    def add(self, grads: Sequence[Matrix], where: str) -> None:
        for layer in self.targets:
            if not np.all(np.isfinite(grads[layer])):
                raise NonFiniteError(f"non-finite gradient for layer {layer} at {where}")
            self.buffer.accumulate(layer, grads[layer])
        self.count += 1

    def end_step(
        self, last_grads: Sequence[Matrix] | Mapping[int, Matrix] | None = None
    ) -> bool:
        """Close one accumulation step; returns True when the probe should stop."""
        self.steps += 1
        last_batch = self.cfg.importance_source is ImportanceSource.LAST_BATCH
        if last_batch and last_grads is not None:
            current = {layer: last_grads[layer] for layer in self.targets}
        else:
            current = {layer: self.buffer.mean(layer, self.count) for layer in self.targets}
        scores = [
            importance(self.net.layers[layer].weight, current[layer], self.cfg.metric)
            for layer in self.targets
        ]
        total = math.fsum(scores)
        normalized = [s / total for s in scores] if total > 0 else [0.0] * len(scores)
        previous = self.trace[-1] if self.trace else None
        self.trace.append(normalized)

        if not self.cfg.adaptive or previous is None or total <= 0:
            return False
        if math.fsum(previous) == 0.0:
            return False
        if adaptive_stop_check(previous, normalized, self.cfg.convergence_threshold):
            logger.info(
                f"Adaptive probe converged at step {self.steps}",
                extra={"steps_used": self.steps},
            )
            return True
        return False

    def result(self) -> ProbeResult:
        grads = {layer: self.buffer.mean(layer, self.count) for layer in self.targets}
        return ProbeResult(
            grads=grads,
            steps_used=self.steps,
            batches_consumed=self.count,
            importance_trace=self.trace,
            threshold=self.cfg.convergence_threshold,
            adaptive=self.cfg.adaptive,
            peak_host_bytes=self.buffer.peak_bytes if self.cfg.offload else 0,
        )


def run_probe(
    net: Network, batch_stream: Iterable[Batch], cfg: ProbeConfig
) -> ProbeResult:
    """Accumulate the mean gradient of every target layer.

    Reads at most cfg.max_steps batches; in adaptive mode it may stop earlier.

    Raises:
        EmptyStreamError: If the stream is empty, or ends before max_steps in
            non-adaptive mode, or before 2 batches in adaptive mode.
        NonFiniteError: If a gradient is not finite.
    """
    accumulator = ProbeAccumulator(net, cfg)
    for batch in batch_stream:
        _, grads = forward_backward(net, batch)
        accumulator.add(grads, f"step {accumulator.steps + 1}")
        stop = accumulator.end_step(grads)
        if stop or accumulator.steps >= cfg.max_steps:
            break

    if accumulator.steps == 0:
        raise EmptyStreamError("probe batch stream is empty")
    if not cfg.adaptive and accumulator.steps < cfg.max_steps:
        raise EmptyStreamError(
            f"probe stream ended after {accumulator.steps} of {cfg.max_steps} batches"
        )
    if cfg.adaptive and accumulator.steps < 2:
        raise EmptyStreamError("adaptive probe needs at least 2 batches")

    result = accumulator.result()
    logger.info(
        "Probe finished",
        extra={
            "steps_used": result.steps_used,
            "host_bytes": result.peak_host_bytes,
        },
    )
    return result


PROBE_MAGIC = b"GPRB"
_HEADER = struct.Struct("<IIdBQI")
_LAYER = struct.Struct("<I")


def write_probe(stream: BinaryIO, result: ProbeResult) -> None:
    """GPRB: magic, (steps_used, batches_consumed, threshold, adaptive,
    peak_host_bytes, n_layers), per-layer (u32 index, GMAT), trace GMAT."""
    stream.write(PROBE_MAGIC)
    stream.write(
        _HEADER.pack(
            result.steps_used,
            result.batches_consumed,
            result.threshold,
            int(result.adaptive),
            result.peak_host_bytes,
            len(result.grads),
        )
    )
    for layer in result.layers:
        stream.write(_LAYER.pack(layer))
        write_matrix(stream, result.grads[layer])
    trace = np.array(result.importance_trace, dtype=np.float64).reshape(
        len(result.importance_trace), len(result.grads)
    )
    write_matrix(stream, trace)


def read_probe(stream: BinaryIO) -> ProbeResult:
    expect_magic(stream, PROBE_MAGIC)
    steps, consumed, threshold, adaptive, peak, n_layers = _HEADER.unpack(
        read_exact(stream, _HEADER.size, "GPRB header")
    )
    grads = {}
    for _ in range(n_layers):
        (layer,) = _LAYER.unpack(read_exact(stream, _LAYER.size, "GPRB layer index"))
        grads[layer] = read_matrix(stream)
    trace = read_matrix(stream)
    if trace.shape[1] != n_layers and trace.shape[0]:
        raise ArtifactFormatError(
            f"importance trace has {trace.shape[1]} columns for {n_layers} layers"
        )
    return ProbeResult(
        grads=grads,
        steps_used=steps,
        batches_consumed=consumed,
        importance_trace=trace.tolist(),
        threshold=threshold,
        adaptive=bool(adaptive),
        peak_host_bytes=peak,
    )


def save_probe(path: Path, result: ProbeResult) -> None:
    with open(path, "wb") as f:
        write_probe(f, result)


def load_probe(path: Path) -> ProbeResult:
    with open(path, "rb") as f:
        return read_probe(f)


def probe_weights(
    net: Network, result: ProbeResult | Mapping[int, Matrix]
) -> dict[int, Matrix]:
    """Base weights for the layers a probe covered."""
    layers = result.layers if isinstance(result, ProbeResult) else sorted(result)
    return {layer: net.layers[layer].weight for layer in layers}
