"""Adapter initialization from probe gradients.

A0 is Kaiming-uniform. B0 = -(A0^T A0)^-1 A0^T G so that A0 @ B0 is the
orthogonal projection of -G onto col(A0), then B0 is multiplied by xi so the
initial adapter output stands for one gradient-descent step of size gamma.
With gamma = 0 the result is byte-identical to vanilla zero-B LoRA.
"""

import logging
import math
import time
from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np
from pydantic import BaseModel, Field

from .adapter import AdapterSet, AdapterState, ScalingMode
from .allocate import RankPlan
from .errors import ConfigError, GramSingularError, NumericalError, ShapeMismatchError
from .numerics import (
    Matrix,
    Rng,
    cholesky_solve,
    derive_seed,
    frobenius,
    sample_gaussian,
    sample_kaiming_uniform,
)

logger = logging.getLogger(__name__)

DEFAULT_GAMMAS = {8: 5e-2, 32: 1e-2, 128: 5e-3}


class XiCalibration(str, Enum):
    """How the B0 multiplier is chosen.

    expected_norm: the variance-argument formula (gamma * sqrt(m) / alpha for
        rslora, gamma * sqrt(r * m) / alpha for lora).
    projector: xi = gamma / s, making the initial delta exactly -gamma * P @ G.
    """

    EXPECTED_NORM = "expected_norm"
    PROJECTOR = "projector"


class InitConfig(BaseModel):
    gamma: float = Field(default=5e-2, ge=0)
    alpha: float = Field(default=16.0, gt=0)
    mode: ScalingMode = ScalingMode.RSLORA
    calibration: XiCalibration = XiCalibration.EXPECTED_NORM
    seed: int = 0
    max_reseeds: int = Field(default=3, ge=0)
    freeze_A: bool = False


def default_gamma(r_ref: int) -> float:
    """Reference gamma for the nearest reference rank on a log scale."""
    if r_ref < 1:
        raise ConfigError(f"r_ref must be >= 1, got {r_ref}")
    nearest = min(DEFAULT_GAMMAS, key=lambda ref: abs(math.log(r_ref) - math.log(ref)))
    return DEFAULT_GAMMAS[nearest]


def init_A(rng: Rng, m: int, r: int) -> Matrix:
    """Kaiming-uniform A0 (m x r) with fan_in = m."""
    if r < 1:
        raise ConfigError(f"rank must be >= 1, got {r}")
    return sample_kaiming_uniform(rng, m, r, fan_in=m)


def compress_init_B(A0: Matrix, G: Matrix) -> Matrix:
    """B0 = -(A0^T A0)^-1 A0^T G via a Cholesky solve on the r x r Gram matrix.

    Raises:
        GramSingularError: If A0 is not of full column rank.
    """
    if A0.shape[0] != G.shape[0]:
        raise ShapeMismatchError(
            f"compress_init_B: A0 {A0.shape} and G {G.shape} disagree on rows"
        )
    return -cholesky_solve(A0.T @ A0, A0.T @ G)


def xi(gamma: float, alpha: float, m: int, r: int, mode: ScalingMode) -> float:
    """Expected-norm multiplier for B0.

    Examples:
        >>> xi(0.05, 16.0, 64, 8, ScalingMode.RSLORA)
        0.025
    """
    if alpha <= 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    if ScalingMode(mode) is ScalingMode.RSLORA:
        return gamma * math.sqrt(m) / alpha
    return gamma * math.sqrt(r * m) / alpha


def calibrated_xi(
    gamma: float,
    alpha: float,
    m: int,
    r: int,
    mode: ScalingMode,
    calibration: XiCalibration,
) -> float:
    if XiCalibration(calibration) is XiCalibration.PROJECTOR:
        return gamma / ScalingMode(mode).scale(alpha, r)
    return xi(gamma, alpha, m, r, mode)


def reconstruction_error(
    A0: Matrix, B0_scaled: Matrix, G: Matrix, gamma: float, s: float
) -> tuple[float, float]:
    """How far the initial delta s * A0 @ B0 is from the step -gamma * G.

    Returns:
        (mean |E|, ||E||_F / ||gamma G||_F) with E = s A0 B0 + gamma G.

    Raises:
        NumericalError: If gamma * G is zero, leaving the ratio undefined.
    """
    if (A0.shape[0], B0_scaled.shape[1]) != G.shape:
        raise ShapeMismatchError(
            f"reconstruction_error: A0 {A0.shape} @ B0 {B0_scaled.shape} "
            f"does not match G {G.shape}"
        )
    reference = frobenius(gamma * G)
    if reference == 0.0:
        raise NumericalError(
            "relative reconstruction error undefined for zero gradient or gamma"
        )
    error = s * (A0 @ B0_scaled) + gamma * G
    return float(np.mean(np.abs(error))), frobenius(error) / reference


def frobenius_expectation_oracle(
    rng: Rng, m: int, n: int, r: int, trials: int
) -> float:
    """Monte Carlo mean of ||A (A^T A)^-1 A^T G||_F for standard-normal A, G."""
    if trials < 100:
        raise ConfigError(f"need at least 100 trials, got {trials}")
    total = 0.0
    for trial in range(trials):
        trial_rng = rng.spawn("frobenius_trial", trial)
        a = sample_gaussian(trial_rng, m, r)
        g = sample_gaussian(trial_rng, m, n)
        total += frobenius(a @ cholesky_solve(a.T @ a, a.T @ g))
    return total / trials


@dataclass
class LayerInitReport:
    layer: int
    rank: int
    xi: float
    abs_error: float | None
    rel_error: float | None
    retries: int


@dataclass
class InitReport:
    gamma: float
    calibration: XiCalibration
    layers: list[LayerInitReport] = field(default_factory=list)
    init_seconds: float = 0.0

    def to_record(self) -> dict[str, Any]:
        return {
            "gamma": self.gamma,
            "calibration": self.calibration.value,
            "init_seconds": self.init_seconds,
            "layers": [vars(layer).copy() for layer in self.layers],
        }


def _draw_factors(
    layer: int, m: int, r: int, G: Matrix, cfg: InitConfig
) -> tuple[Matrix, Matrix, int]:
    for attempt in range(cfg.max_reseeds + 1):
        if attempt == 0:
            seed = derive_seed(cfg.seed, "init_A", layer)
        else:
            seed = derive_seed(cfg.seed, "init_A_reseed", layer, attempt)
        a0 = init_A(Rng(seed), m, r)
        try:
            return a0, compress_init_B(a0, G), attempt
        except GramSingularError:
            logger.warning(
                f"Singular Gram matrix for layer {layer}, re-seeding A0",
                extra={"layer": layer, "retries": attempt + 1},
            )
    raise GramSingularError(
        f"layer {layer}: Gram matrix singular after {cfg.max_reseeds} re-seeds of A0"
    )


@dataclass
class PreScaleFactors:
    """A0 and the unscaled B0 per layer, plus how many re-seeds each needed."""

    A: dict[int, Matrix]
    B: dict[int, Matrix]
    retries: dict[int, int]


def gora_factors(
    plan: RankPlan, grads: Mapping[int, Matrix], cfg: InitConfig
) -> PreScaleFactors:
    """Draw A0 and solve for the unscaled B0 on every layer with rank > 0."""
    factors = PreScaleFactors(A={}, B={}, retries={})
    for rec in plan.records:
        if rec.rank == 0:
            continue
        G = grads[rec.layer]
        if G.shape != (rec.m, rec.n):
            raise ShapeMismatchError(
                f"layer {rec.layer}: gradient {G.shape} does not match plan "
                f"({rec.m}, {rec.n})"
            )
        a0, b0, retries = _draw_factors(rec.layer, rec.m, rec.rank, G, cfg)
        factors.A[rec.layer] = a0
        factors.B[rec.layer] = b0
        factors.retries[rec.layer] = retries
    return factors


def scale_factors(
    factors: PreScaleFactors, gamma: float, cfg: InitConfig
) -> AdapterSet:
    """Adapters with B = xi(gamma) * B0; gamma = 0 yields exact zeros."""
    adapters: AdapterSet = {}
    for layer, a0 in factors.A.items():
        m, r = a0.shape
        b0 = factors.B[layer]
        if gamma == 0.0:
            b = np.zeros_like(b0)
        else:
            b = calibrated_xi(gamma, cfg.alpha, m, r, cfg.mode, cfg.calibration) * b0
        adapters[layer] = AdapterState(
            A=a0.copy(), B=b, alpha=cfg.alpha, mode=cfg.mode, freeze_A=cfg.freeze_A
        )
    return adapters


def gora_initialize(
    plan: RankPlan,
    grads: Mapping[int, Matrix],
    cfg: InitConfig,
    factors: PreScaleFactors | None = None,
) -> tuple[AdapterSet, InitReport]:
    """Full initialization for every planned layer, with timing and diagnostics.

    Args:
        plan: Rank plan; layers with rank 0 get no adapter.
        grads: Probe gradients keyed by layer.
        cfg: Init config; cfg.gamma is used as-is.
        factors: Previously drawn pre-scale factors (reused by gamma search).
    """
    start = time.perf_counter()
    if factors is None:
        factors = gora_factors(plan, grads, cfg)
    adapters = scale_factors(factors, cfg.gamma, cfg)
    elapsed = time.perf_counter() - start

    report = InitReport(gamma=cfg.gamma, calibration=cfg.calibration, init_seconds=elapsed)
    for layer in sorted(adapters):
        ad = adapters[layer]
        G = grads[layer]
        abs_error = rel_error = None
        if cfg.gamma > 0 and np.any(G):
            abs_error, rel_error = reconstruction_error(ad.A, ad.B, G, cfg.gamma, ad.scale)
        report.layers.append(
            LayerInitReport(
                layer=layer,
                rank=ad.rank,
                xi=calibrated_xi(
                    cfg.gamma, cfg.alpha, ad.m, ad.rank, cfg.mode, cfg.calibration
                ),
                abs_error=abs_error,
                rel_error=rel_error,
                retries=factors.retries[layer],
            )
        )
    logger.info(
        f"GoRA initialization took {elapsed * 1000:.2f} ms",
        extra={"gamma": cfg.gamma, "duration_ms": elapsed * 1000},
    )
    return adapters, report


def lora_initialize(plan: RankPlan, cfg: InitConfig) -> AdapterSet:
    """Vanilla LoRA: the same Kaiming A0 draw as GoRA, B0 = 0."""
    adapters: AdapterSet = {}
    for rec in plan.records:
        if rec.rank == 0:
            continue
        a0 = init_A(Rng(derive_seed(cfg.seed, "init_A", rec.layer)), rec.m, rec.rank)
        adapters[rec.layer] = AdapterState(
            A=a0,
            B=np.zeros((rec.rank, rec.n)),
            alpha=cfg.alpha,
            mode=cfg.mode,
            freeze_A=cfg.freeze_A,
        )
    return adapters
