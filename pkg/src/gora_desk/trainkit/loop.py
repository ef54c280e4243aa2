"""Training loop over an adapted network."""

import csv
import logging
import time
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..adapter import AdapterSet, adapter_grads
from ..errors import EmptyStreamError, NumericalError
from ..netcore import Batch, LossKind, Network, accuracy, evaluate_loss, forward_backward
from .optim import AdapterOptimizer, OptimConfig
from .schedule import lr_at

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StepRecord:
    step: int
    loss: float
    lr: float


@dataclass
class TrainRecord:
    steps: list[StepRecord] = field(default_factory=list)
    initial_eval_loss: float | None = None
    final_eval_loss: float | None = None
    final_eval_accuracy: float | None = None
    seed: int = 0
    train_seconds: float = 0.0

    @property
    def first_batch_loss(self) -> float | None:
        return self.steps[0].loss if self.steps else None

    def write_csv(self, path: Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["step", "loss", "lr"])
            for rec in self.steps:
                writer.writerow([rec.step, repr(rec.loss), repr(rec.lr)])

    def summary(self) -> dict[str, Any]:
        return {
            "steps": len(self.steps),
            "first_batch_loss": self.first_batch_loss,
            "final_train_loss": self.steps[-1].loss if self.steps else None,
            "initial_eval_loss": self.initial_eval_loss,
            "final_eval_loss": self.final_eval_loss,
            "final_eval_accuracy": self.final_eval_accuracy,
            "seed": self.seed,
            "train_seconds": self.train_seconds,
        }


def read_train_csv(path: Path) -> list[StepRecord]:
    with open(path, newline="", encoding="utf-8") as f:
        return [
            StepRecord(step=int(row["step"]), loss=float(row["loss"]), lr=float(row["lr"]))
            for row in csv.DictReader(f)
        ]


def _base_snapshot(net: Network) -> list[bytes]:
    return [layer.weight.tobytes() for layer in net.layers]


def train(
    net: Network,
    adapters: AdapterSet,
    batches: Sequence[Batch],
    cfg: OptimConfig,
    steps: int,
    eval_batch: Batch | None = None,
    seed: int = 0,
    check_base: bool = False,
) -> TrainRecord:
    """Train the adapter factors in place for `steps` steps.

    Batches are cycled in order (step % len(batches)). The recorded loss of a
    step is the loss before that step's update.

    Args:
        net: Frozen base network.
        adapters: Registry mutated in place.
        batches: Training batches.
        cfg: Optimizer and schedule settings.
        steps: Number of optimizer steps.
        eval_batch: Evaluated before and after training when given.
        seed: Recorded for provenance; training itself draws no randomness.
        check_base: Verify base weights are bit-identical after every step.

    Raises:
        EmptyStreamError: If steps > 0 and there are no batches.
        NonFiniteError: On a non-finite loss or gradient, with the step index.
    """
    if steps > 0 and not batches:
        raise EmptyStreamError("training needs at least one batch")

    record = TrainRecord(seed=seed)
    if eval_batch is not None:
        record.initial_eval_loss = evaluate_loss(net, eval_batch, adapters)

    snapshot = _base_snapshot(net) if check_base else None
    optimizer = AdapterOptimizer(cfg)
    start = time.perf_counter()
    for step in range(steps):
        batch = batches[step % len(batches)]
        loss, grads = forward_backward(net, batch, adapters)
        lr = lr_at(step, steps, cfg)
        adapter_g = {layer: adapter_grads(grads[layer], ad) for layer, ad in adapters.items()}
        optimizer.step(adapters, adapter_g, lr, step_index=step)
        record.steps.append(StepRecord(step=step, loss=loss, lr=lr))
        logger.debug("train step", extra={"step": step, "loss": loss, "lr": lr})
        if snapshot is not None and _base_snapshot(net) != snapshot:
            raise NumericalError(f"base weights changed at step {step}")
    record.train_seconds = time.perf_counter() - start

    if eval_batch is not None:
        record.final_eval_loss = evaluate_loss(net, eval_batch, adapters)
        if net.loss is LossKind.SOFTMAX_CROSS_ENTROPY:
            record.final_eval_accuracy = accuracy(net, eval_batch, adapters)
    logger.info(
        f"Training finished after {steps} steps",
        extra={"loss": record.final_eval_loss, "duration_ms": record.train_seconds * 1000},
    )
    return record
