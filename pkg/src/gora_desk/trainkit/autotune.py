"""Adaptive gamma: scan a geometric grid and keep the best first-batch loss."""

import logging

from ..errors import ConfigError, NonFiniteError
from ..gorainit import InitConfig, PreScaleFactors, scale_factors
from ..netcore import Batch, Network, evaluate_loss

logger = logging.getLogger(__name__)


def gamma_grid(start: float = 1.0, decay: float = 0.9, floor: float = 5e-5) -> list[float]:
    """Candidates start * decay**k while >= floor, then floor itself.

    Examples:
        >>> len(gamma_grid())
        95
    """
    if not 0.0 < decay < 1.0:
        raise ConfigError(f"decay must lie in (0, 1), got {decay}")
    if not 0.0 < floor <= start:
        raise ConfigError(f"need 0 < floor <= start, got floor={floor}, start={start}")
    grid = []
    k = 0
    while (candidate := start * decay**k) >= floor:
        grid.append(candidate)
        k += 1
    if grid[-1] != floor:
        grid.append(floor)
    return grid


def gamma_losses(
    net: Network,
    factors: PreScaleFactors,
    first_batch: Batch,
    cfg: InitConfig,
    grid: list[float],
) -> list[tuple[float, float | None]]:
    """Forward-only first-batch loss for each candidate; None when non-finite."""
    losses: list[tuple[float, float | None]] = []
    for gamma in grid:
        adapters = scale_factors(factors, gamma, cfg)
        try:
            loss = evaluate_loss(net, first_batch, adapters)
        except NonFiniteError:
            logger.warning(
                f"Skipping gamma={gamma:.3e}: non-finite loss", extra={"gamma": gamma}
            )
            loss = None
        losses.append((gamma, loss))
    return losses


def autotune_gamma(
    net: Network,
    factors: PreScaleFactors,
    first_batch: Batch,
    cfg: InitConfig,
    start: float = 1.0,
    decay: float = 0.9,
    floor: float = 5e-5,
) -> float:
    """Gamma with the lowest first-batch loss; ties go to the larger gamma.

    Args:
        net: Frozen base network.
        factors: A0 and unscaled B0 from gora_factors.
        first_batch: Batch the candidates are scored on.
        cfg: Supplies alpha, scaling mode and xi calibration.

    Raises:
        NonFiniteError: If every candidate produced a non-finite loss.
    """
    best_gamma = None
    best_loss = float("inf")
    # grid is descending, strict < keeps the larger gamma on ties
    for gamma, loss in gamma_losses(
        net, factors, first_batch, cfg, gamma_grid(start, decay, floor)
    ):
        if loss is not None and loss < best_loss:
            best_gamma, best_loss = gamma, loss
    if best_gamma is None:
        raise NonFiniteError("every gamma candidate produced a non-finite loss")
    logger.info(
        f"Selected gamma={best_gamma:.4e}",
        extra={"gamma": best_gamma, "loss": best_loss},
    )
    return best_gamma
