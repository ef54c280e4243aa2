"""Rank allocation from probe gradients.

Each target layer gets an importance score, importances are normalized into
advantages, and the smoothed budget b = sum(sqrt(m + n)) * r_ref is shared
out as r = round(b * a / sqrt(m + n)), clipped to [r_min, min(r_max, m, n)].
"""

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from enum import Enum
from typing import Any

from pydantic import BaseModel, Field, model_validator

from .errors import NumericalError, ShapeMismatchError, UninformativeProbeError
from .numerics import Matrix, hadamard_abs_avg, nuclear_norm
from .numerics.linalg import as_matrix

logger = logging.getLogger(__name__)

NORMALIZATION_TOLERANCE = 1e-9


class ImportanceMetric(str, Enum):
    """Per-layer importance score."""

    SENSITIVITY = "sensitivity"  # avg |W * G|
    NUCLEAR_GRAD = "nuclear_grad"  # ||G||_*
    NUCLEAR_PROD = "nuclear_prod"  # ||W * G||_*


class AllocConfig(BaseModel):
    """Rank bounds and metric. r_min defaults to r_ref // 2, r_max to 4 * r_ref."""

    r_ref: int = Field(default=8, ge=1)
    r_min: int | None = Field(default=None, ge=0)
    r_max: int | None = Field(default=None, ge=1)
    metric: ImportanceMetric = ImportanceMetric.SENSITIVITY

    @model_validator(mode="after")
    def fill_bounds(self) -> "AllocConfig":
        if self.r_min is None:
            self.r_min = self.r_ref // 2
        if self.r_max is None:
            self.r_max = 4 * self.r_ref
        if not self.r_min <= self.r_ref <= self.r_max:
            raise ValueError(
                f"need r_min <= r_ref <= r_max, got "
                f"{self.r_min} <= {self.r_ref} <= {self.r_max}"
            )
        return self


def importance(weight: Matrix, grad: Matrix, metric: ImportanceMetric) -> float:
    """Importance of one weight matrix under the selected metric."""
    weight = as_matrix(weight, "W")
    grad = as_matrix(grad, "G")
    if weight.shape != grad.shape:
        raise ShapeMismatchError(
            f"importance: W {weight.shape} and G {grad.shape} differ"
        )
    metric = ImportanceMetric(metric)
    if metric is ImportanceMetric.SENSITIVITY:
        return hadamard_abs_avg(weight, grad)
    if metric is ImportanceMetric.NUCLEAR_GRAD:
        return nuclear_norm(grad)
    return nuclear_norm(weight * grad)


def advantages(importances: Sequence[float]) -> list[float]:
    """Normalize importances to sum to one.

    Raises:
        UninformativeProbeError: If every importance is zero.
    """
    if any(value < 0 or not math.isfinite(value) for value in importances):
        raise NumericalError(f"importances must be finite and >= 0: {list(importances)}")
    total = math.fsum(importances)
    if total <= 0.0:
        raise UninformativeProbeError(
            "all layer importances are zero; the probe carried no gradient signal"
        )
    return [value / total for value in importances]


def total_budget(layers: Sequence[tuple[int, int]], r_ref: int) -> float:
    """b = sum over layers of sqrt(m + n) * r_ref."""
    return math.fsum(math.sqrt(m + n) * r_ref for m, n in layers)


def round_half_away(value: float) -> int:
    """Round to nearest integer, ties away from zero (4.5 -> 5, -4.5 -> -5)."""
    return int(math.copysign(math.floor(abs(value) + 0.5), value))


@dataclass(frozen=True)
class LayerAllocation:
    layer: int
    m: int
    n: int
    importance: float
    advantage: float
    budget: float
    rank: int
    unclipped_rank: int

    @property
    def params(self) -> int:
        return self.rank * (self.m + self.n)


@dataclass(frozen=True)
class RankPlan:
    """Per-layer allocation. Totals are always recomputed from the records."""

    records: tuple[LayerAllocation, ...]
    r_ref: int
    metric: ImportanceMetric = ImportanceMetric.SENSITIVITY

    @property
    def b(self) -> float:
        return total_budget([(rec.m, rec.n) for rec in self.records], self.r_ref)

    @property
    def ranks(self) -> dict[int, int]:
        return {rec.layer: rec.rank for rec in self.records}

    @property
    def params_allocated(self) -> int:
        return sum(rec.params for rec in self.records)

    @property
    def params_lora_equivalent(self) -> int:
        return sum(self.r_ref * (rec.m + rec.n) for rec in self.records)

    @property
    def param_deviation(self) -> float:
        return _deviation(self.params_allocated, self.params_lora_equivalent)

    @property
    def unclipped_param_deviation(self) -> float:
        unclipped = sum(rec.unclipped_rank * (rec.m + rec.n) for rec in self.records)
        return _deviation(unclipped, self.params_lora_equivalent)

    @property
    def clipped_layers(self) -> list[int]:
        return [rec.layer for rec in self.records if rec.rank != rec.unclipped_rank]

    def to_table(self) -> str:
        """Human-readable table, one line per layer plus totals."""
        lines = [
            f"# metric={self.metric.value} r_ref={self.r_ref} b={self.b:.6f}",
            f"{'layer':>5} {'m':>5} {'n':>5} {'I':>14} {'a':>10} {'p':>12} {'r':>4}",
        ]
        for rec in self.records:
            lines.append(
                f"{rec.layer:>5} {rec.m:>5} {rec.n:>5} {rec.importance:>14.6e} "
                f"{rec.advantage:>10.6f} {rec.budget:>12.4f} {rec.rank:>4}"
            )
        lines.append(
            f"# params_allocated={self.params_allocated} "
            f"params_lora_equivalent={self.params_lora_equivalent} "
            f"deviation={self.param_deviation:.4f} "
            f"unclipped_deviation={self.unclipped_param_deviation:.4f} "
            f"clipped={self.clipped_layers}"
        )
        return "\n".join(lines) + "\n"

    def to_record(self) -> dict[str, Any]:
        return {
            "metric": self.metric.value,
            "r_ref": self.r_ref,
            "b": self.b,
            "layers": [
                {
                    "layer": rec.layer,
                    "m": rec.m,
                    "n": rec.n,
                    "importance": rec.importance,
                    "advantage": rec.advantage,
                    "budget": rec.budget,
                    "rank": rec.rank,
                    "unclipped_rank": rec.unclipped_rank,
                }
                for rec in self.records
            ],
            "params_allocated": self.params_allocated,
            "params_lora_equivalent": self.params_lora_equivalent,
            "param_deviation": self.param_deviation,
            "unclipped_param_deviation": self.unclipped_param_deviation,
            "clipped_layers": self.clipped_layers,
        }

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> "RankPlan":
        records = tuple(
            LayerAllocation(
                layer=int(item["layer"]),
                m=int(item["m"]),
                n=int(item["n"]),
                importance=float(item["importance"]),
                advantage=float(item["advantage"]),
                budget=float(item["budget"]),
                rank=int(item["rank"]),
                unclipped_rank=int(item["unclipped_rank"]),
            )
            for item in record["layers"]
        )
        return cls(
            records=records,
            r_ref=int(record["r_ref"]),
            metric=ImportanceMetric(record["metric"]),
        )


def _deviation(allocated: int, reference: int) -> float:
    if reference == 0:
        return 0.0
    return abs(allocated - reference) / reference


def allocate_ranks(
    cfg: AllocConfig,
    layers: Sequence[tuple[int, int]],
    advantage_values: Sequence[float],
    layer_ids: Sequence[int] | None = None,
    importances: Sequence[float] | None = None,
) -> RankPlan:
    """Integer ranks r = clip(round(b * a / sqrt(m + n)), r_min, min(r_max, m, n)).

    Args:
        cfg: Rank bounds and metric.
        layers: (m, n) per target layer.
        advantage_values: Normalized advantages, same order as `layers`.
        layer_ids: Layer indices for the records; defaults to 0..L-1.
        importances: Raw importances, recorded for reporting only.
    """
    if len(layers) != len(advantage_values):
        raise ShapeMismatchError(
            f"{len(layers)} layers but {len(advantage_values)} advantages"
        )
    if abs(math.fsum(advantage_values) - 1.0) > NORMALIZATION_TOLERANCE:
        raise NumericalError(
            f"advantages must sum to 1, got {math.fsum(advantage_values)!r}"
        )
    if layer_ids is None:
        layer_ids = range(len(layers))
    if importances is None:
        importances = advantage_values

    b = total_budget(layers, cfg.r_ref)
    records = []
    for layer, (m, n), a, imp in zip(
        layer_ids, layers, advantage_values, importances, strict=True
    ):
        budget = b * a
        unclipped = round_half_away(budget / math.sqrt(m + n))
        upper = min(cfg.r_max, m, n)
        rank = min(max(unclipped, cfg.r_min), upper)
        records.append(
            LayerAllocation(
                layer=layer,
                m=m,
                n=n,
                importance=imp,
                advantage=a,
                budget=budget,
                rank=rank,
                unclipped_rank=unclipped,
            )
        )
    plan = RankPlan(records=tuple(records), r_ref=cfg.r_ref, metric=cfg.metric)
    if plan.clipped_layers:
        logger.info(
            f"Rank clipping bound on layers {plan.clipped_layers}",
            extra={"result": {"param_deviation": plan.param_deviation}},
        )
    return plan


def plan_ranks(
    weights: Mapping[int, Matrix], grads: Mapping[int, Matrix], cfg: AllocConfig
) -> RankPlan:
    """Importance, advantages and ranks for every layer present in `grads`.

    Args:
        weights: Base weight per layer index.
        grads: Probe-averaged gradient per layer index.
        cfg: Allocation config.
    """
    layer_ids = sorted(grads)
    importances = [importance(weights[i], grads[i], cfg.metric) for i in layer_ids]
    plan = allocate_ranks(
        cfg,
        [weights[i].shape for i in layer_ids],
        advantages(importances),
        layer_ids=layer_ids,
        importances=importances,
    )
    logger.info(
        "Rank plan computed",
        extra={
            "result": {
                "ranks": plan.ranks,
                "params_allocated": plan.params_allocated,
                "params_lora_equivalent": plan.params_lora_equivalent,
            }
        },
    )
    return plan


def fixed_rank_plan(
    weights: Mapping[int, Matrix],
    r: int,
    metric: ImportanceMetric = ImportanceMetric.SENSITIVITY,
) -> RankPlan:
    """Uniform rank r on every layer (capped at min(m, n)); the LoRA baseline."""
    records = []
    for layer in sorted(weights):
        m, n = weights[layer].shape
        rank = min(r, m, n)
        records.append(
            LayerAllocation(
                layer=layer,
                m=m,
                n=n,
                importance=0.0,
                advantage=1.0 / len(weights),
                budget=math.sqrt(m + n) * r,
                rank=rank,
                unclipped_rank=r,
            )
        )
    return RankPlan(records=tuple(records), r_ref=r, metric=metric)
