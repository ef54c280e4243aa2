"""In-process simulation of the data-parallel probe and initialization.

W logical workers share one global batch stream round-robin. Each round every
worker computes its local gradients, then a per-layer reduce folds them onto
worker 0's host buffer in ascending worker order, so the floating-point
summation order matches a single worker reading the stream in order. Worker
0 then allocates ranks, broadcasts the importance set, initializes adapters
and broadcasts them.
"""

import hashlib
import io
import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

from pydantic import BaseModel, Field

from .adapter import AdapterSet, adapter_bytes, read_adapters
from .allocate import AllocConfig, RankPlan, advantages, allocate_ranks, importance
from .errors import EmptyStreamError, HostBufferError
from .gorainit import InitConfig, InitReport, gora_initialize
from .netcore import Batch, Network, forward_backward
from .numerics import Matrix
from .probe import HostBuffer, ProbeAccumulator, ProbeConfig, ProbeResult

logger = logging.getLogger(__name__)


class ReduceMode(str, Enum):
    """reduce: all workers' gradients reach worker 0. root_only: worker 0
    accumulates only its own shard."""

    REDUCE = "reduce"
    ROOT_ONLY = "root_only"


class WorkerTopology(BaseModel):
    world_size: int = Field(default=1, ge=1)
    reduce_mode: ReduceMode = ReduceMode.REDUCE
    threaded: bool = False


def shard_stream(batches: Sequence[Batch], world_size: int) -> list[list[Batch]]:
    """Round-robin shards; worker w gets batches w, w + W, w + 2W, ...

    A final incomplete round is dropped so every round is synchronized.
    """
    rounds = len(batches) // world_size
    dropped = len(batches) - rounds * world_size
    if dropped:
        logger.warning(
            f"Dropping {dropped} batches that do not fill a round of {world_size}",
            extra={"arguments": {"batches": len(batches), "world_size": world_size}},
        )
    return [
        [batches[r * world_size + w] for r in range(rounds)] for w in range(world_size)
    ]


@dataclass
class BroadcastEvent:
    order: int
    kind: str
    source: int
    targets: list[int]
    checksum: str


@dataclass
class DdpProbeOutcome:
    result: ProbeResult
    released: list[tuple[int, int, int]] = field(default_factory=list)


@dataclass
class DdpInitOutcome:
    plan: RankPlan
    report: InitReport
    worker_plans: list[RankPlan]
    worker_adapters: list[AdapterSet]
    checksums: list[str]
    events: list[BroadcastEvent]


def _worker_grads(net: Network, batch: Batch) -> list[Matrix]:
    _, grads = forward_backward(net, batch)
    return grads


def ddp_probe(
    net: Network,
    batches: Sequence[Batch],
    topology: WorkerTopology,
    cfg: ProbeConfig,
) -> DdpProbeOutcome:
    """Distributed probe over cfg.max_steps rounds of world_size batches.

    The root's host buffer is the only accumulation arena; every non-root
    gradient is released right after it is folded in (recorded as
    (round, worker, layer) in `released`).

    Raises:
        EmptyStreamError: If any shard is empty, or too short in non-adaptive mode.
    """
    world = topology.world_size
    shards = shard_stream(batches, world)
    rounds_available = len(shards[0])
    if rounds_available == 0:
        raise EmptyStreamError(
            f"{len(batches)} batches leave empty shards for {world} workers"
        )
    if not cfg.adaptive and rounds_available < cfg.max_steps:
        raise EmptyStreamError(
            f"shards hold {rounds_available} rounds, probe needs {cfg.max_steps}"
        )

    buffer = HostBuffer()
    accumulator = ProbeAccumulator(net, cfg, buffer)
    released: list[tuple[int, int, int]] = []
    executor = ThreadPoolExecutor(max_workers=world) if topology.threaded else None
    try:
        for round_index in range(min(rounds_available, cfg.max_steps)):
            round_batches = [shards[w][round_index] for w in range(world)]
            if executor is not None:
                # map yields in submission order, which fixes the reduce order
                local = list(executor.map(lambda b: _worker_grads(net, b), round_batches))
            else:
                local = [_worker_grads(net, b) for b in round_batches]

            folded = local if topology.reduce_mode is ReduceMode.REDUCE else local[:1]
            for worker, grads in enumerate(folded):
                accumulator.add(grads, f"round {round_index} worker {worker}")
                if worker:
                    for layer in accumulator.targets:
                        released.append((round_index, worker, layer))
            round_grads = reduce_round(folded, accumulator.targets)
            check_single_copy(buffer, net, accumulator.targets)

            if accumulator.end_step(round_grads) or accumulator.steps >= cfg.max_steps:
                break
    finally:
        if executor is not None:
            executor.shutdown()

    if cfg.adaptive and accumulator.steps < 2:
        raise EmptyStreamError("adaptive probe needs at least 2 rounds")

    result = accumulator.result()
    result.batches_consumed = accumulator.steps * world
    outcome = DdpProbeOutcome(result=result, released=released)
    logger.info(
        f"Distributed probe finished over {world} workers",
        extra={
            "steps_used": result.steps_used,
            "host_bytes": buffer.peak_bytes,
            "worker": world,
        },
    )
    return outcome


def reduce_round(
    worker_grads: Sequence[Sequence[Matrix]], targets: Sequence[int]
) -> dict[int, Matrix]:
    """Mean of one round's gradients per target layer, summed in worker order.

    A single worker's gradients are returned unchanged.
    """
    reduced: dict[int, Matrix] = {}
    for layer in targets:
        total = worker_grads[0][layer].copy()
        for grads in worker_grads[1:]:
            total += grads[layer]
        if len(worker_grads) > 1:
            total /= len(worker_grads)
        reduced[layer] = total
    return reduced


def check_single_copy(buffer: HostBuffer, net: Network, targets: Sequence[int]) -> None:
    """The host buffer holds exactly one float64 m x n slot per target layer.

    The expected size comes from the network's weight shapes, so a buffer
    that ever grew past one copy (peak) or lost a slot is caught.

    Raises:
        HostBufferError: If allocated or peak bytes differ from sum(m * n * 8).
    """
    expected = sum(net.layers[layer].weight.size * 8 for layer in targets)
    if sorted(targets) != buffer.layers:
        raise HostBufferError(
            f"host buffer holds slots {buffer.layers}, expected {sorted(targets)}"
        )
    if buffer.allocated_bytes != expected or buffer.peak_bytes != expected:
        raise HostBufferError(
            f"host buffer holds {buffer.allocated_bytes} bytes "
            f"(peak {buffer.peak_bytes}), expected a single copy of {expected}"
        )


def _checksum(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def ddp_allocate_and_init(
    net: Network,
    probe: ProbeResult,
    topology: WorkerTopology,
    alloc_cfg: AllocConfig,
    init_cfg: InitConfig,
) -> DdpInitOutcome:
    """Root computes importances, broadcasts them, every worker derives the
    same plan, root initializes adapters and broadcasts them.

    init_cfg.gamma must already be resolved.
    """
    world = topology.world_size
    layer_ids = probe.layers
    shapes = [probe.grads[layer].shape for layer in layer_ids]
    importances = [
        importance(net.layers[layer].weight, probe.grads[layer], alloc_cfg.metric)
        for layer in layer_ids
    ]
    events: list[BroadcastEvent] = []
    events.append(
        BroadcastEvent(
            order=len(events),
            kind="importance",
            source=0,
            targets=list(range(1, world)),
            checksum=_checksum(repr(importances).encode("utf-8")),
        )
    )

    worker_plans = []
    for _ in range(world):
        received = list(importances)
        worker_plans.append(
            allocate_ranks(
                alloc_cfg,
                shapes,
                advantages(received),
                layer_ids=layer_ids,
                importances=received,
            )
        )
    plan = worker_plans[0]

    root_adapters, report = gora_initialize(plan, probe.grads, init_cfg)
    payload = adapter_bytes(root_adapters)
    events.append(
        BroadcastEvent(
            order=len(events),
            kind="adapters",
            source=0,
            targets=list(range(1, world)),
            checksum=_checksum(payload),
        )
    )

    worker_adapters = [root_adapters]
    for _ in range(1, world):
        worker_adapters.append(read_adapters(io.BytesIO(payload)))
    checksums = [_checksum(adapter_bytes(adapters)) for adapters in worker_adapters]
    logger.info(
        "Broadcast adapters to all workers",
        extra={"worker": world, "result": {"checksums": checksums}},
    )
    return DdpInitOutcome(
        plan=plan,
        report=report,
        worker_plans=worker_plans,
        worker_adapters=worker_adapters,
        checksums=checksums,
        events=events,
    )
