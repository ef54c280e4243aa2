"""Learning-rate schedule: linear warmup from zero, then optional cosine decay."""

import math

from ..errors import ConfigError
from .optim import DecayKind, OptimConfig


def lr_at(step: int, total_steps: int, cfg: OptimConfig) -> float:
    """Learning rate at `step` of `total_steps`.

    Warmup spans warmup_ratio * total_steps steps (not rounded). After warmup
    the rate follows a half cosine from the peak down to min_lr_ratio * peak.

    Examples:
        >>> lr_at(0, 100, OptimConfig(lr=1.0))
        0.0
    """
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    peak = cfg.lr
    warmup = cfg.warmup_ratio * total_steps
    if warmup > 0 and step < warmup:
        return peak * step / warmup
    if cfg.decay is DecayKind.NONE:
        return peak
    span = total_steps - warmup
    if span <= 0:
        return peak
    progress = min(max((step - warmup) / span, 0.0), 1.0)
    floor = cfg.min_lr_ratio * peak
    return floor + (peak - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))
