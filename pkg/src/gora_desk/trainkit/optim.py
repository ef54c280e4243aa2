"""SGD and AdamW over adapter factors.

B matrices step with lr * b_lr_ratio, A matrices with lr. Frozen A factors are
skipped entirely and never receive optimizer state.
"""

from collections.abc import Mapping
from dataclasses import dataclass
from enum import Enum

import numpy as np
from pydantic import BaseModel, Field, field_validator

from ..adapter import AdapterSet
from ..errors import NonFiniteError
from ..numerics import Matrix


class OptimAlgorithm(str, Enum):
    SGD = "sgd"
    ADAMW = "adamw"


class DecayKind(str, Enum):
    NONE = "none"
    COSINE = "cosine"


class OptimConfig(BaseModel):
    algorithm: OptimAlgorithm = OptimAlgorithm.ADAMW
    lr: float = Field(default=1e-3, gt=0)
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = Field(default=0.0, ge=0)
    eps: float = Field(default=1e-8, gt=0)
    b_lr_ratio: float = Field(default=16.0, gt=0)
    warmup_ratio: float = Field(default=0.03, ge=0, le=1)
    decay: DecayKind = DecayKind.COSINE
    min_lr_ratio: float = Field(default=0.0, ge=0, le=1)

    @field_validator("betas")
    @classmethod
    def betas_in_range(cls, value: tuple[float, float]) -> tuple[float, float]:
        for beta in value:
            if not 0.0 <= beta < 1.0:
                raise ValueError(f"betas must lie in [0, 1), got {value}")
        return value


@dataclass
class _Moments:
    first: Matrix
    second: Matrix


class AdapterOptimizer:
    """Single-owner optimizer state for one adapter registry."""

    def __init__(self, cfg: OptimConfig):
        self.cfg = cfg
        self.t = 0
        self._moments: dict[tuple[int, str], _Moments] = {}

    def _update(self, key: tuple[int, str], param: Matrix, grad: Matrix, lr: float) -> Matrix:
        cfg = self.cfg
        decayed = param * (1.0 - lr * cfg.weight_decay) if cfg.weight_decay else param
        if cfg.algorithm is OptimAlgorithm.SGD:
            return decayed - lr * grad

        beta1, beta2 = cfg.betas
        moments = self._moments.get(key)
        if moments is None:
            moments = _Moments(np.zeros_like(param), np.zeros_like(param))
            self._moments[key] = moments
        moments.first = beta1 * moments.first + (1.0 - beta1) * grad
        moments.second = beta2 * moments.second + (1.0 - beta2) * grad * grad
        first_hat = moments.first / (1.0 - beta1**self.t)
        second_hat = moments.second / (1.0 - beta2**self.t)
        return decayed - lr * first_hat / (np.sqrt(second_hat) + cfg.eps)

    def step(
        self,
        adapters: AdapterSet,
        grads: Mapping[int, tuple[Matrix, Matrix]],
        lr: float,
        step_index: int | None = None,
    ) -> None:
        """Apply one update in place.

        Args:
            adapters: Registry whose A/B factors are replaced.
            grads: (gA, gB) per adapted layer.
            lr: Scheduled base learning rate for this step.
            step_index: Reported in errors.

        Raises:
            NonFiniteError: If any gradient entry is NaN or Inf.
        """
        self.t += 1
        where = step_index if step_index is not None else self.t - 1
        for layer in sorted(adapters):
            ad = adapters[layer]
            grad_a, grad_b = grads[layer]
            for name, grad in (("A", grad_a), ("B", grad_b)):
                if not np.all(np.isfinite(grad)):
                    raise NonFiniteError(
                        f"non-finite gradient for layer {layer} {name} at step {where}"
                    )
            if not ad.freeze_A:
                ad.A = self._update((layer, "A"), ad.A, grad_a, lr)
            ad.B = self._update((layer, "B"), ad.B, grad_b, lr * self.cfg.b_lr_ratio)
