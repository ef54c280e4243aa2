"""Low-rank adapter state, factored forward, exact gradients and merging."""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..errors import ConfigError, ShapeMismatchError
from ..numerics import Matrix


class ScalingMode(str, Enum):
    """How the adapter product is scaled: alpha / r or alpha / sqrt(r)."""

    LORA = "lora"
    RSLORA = "rslora"

    def scale(self, alpha: float, rank: int) -> float:
        if self is ScalingMode.LORA:
            return alpha / rank
        return alpha / np.sqrt(rank)


@dataclass
class AdapterState:
    """Per-layer pair (A: m x r, B: r x n) with scaling and the frozen-A flag.

    The scale is always derived from (alpha, mode, rank) on access.
    """

    A: Matrix
    B: Matrix
    alpha: float
    mode: ScalingMode = ScalingMode.RSLORA
    freeze_A: bool = False

    def __post_init__(self) -> None:
        if self.A.ndim != 2 or self.B.ndim != 2:
            raise ShapeMismatchError(
                f"adapter factors must be 2-D, got A {self.A.shape}, B {self.B.shape}"
            )
        if self.A.shape[1] != self.B.shape[0]:
            raise ShapeMismatchError(
                f"adapter factors do not chain: A {self.A.shape}, B {self.B.shape}"
            )
        if self.rank < 1:
            raise ConfigError(f"adapter rank must be >= 1, got {self.rank}")
        if self.rank > min(self.m, self.n):
            raise ConfigError(
                f"adapter rank {self.rank} exceeds min(m, n)={min(self.m, self.n)}"
            )
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        self.mode = ScalingMode(self.mode)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.B.shape[1]

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    @property
    def scale(self) -> float:
        return self.mode.scale(self.alpha, self.rank)

    @property
    def n_params(self) -> int:
        """Trainable entries, r * (m + n)."""
        return self.rank * (self.m + self.n)

    def copy(self) -> "AdapterState":
        return AdapterState(
            A=self.A.copy(),
            B=self.B.copy(),
            alpha=self.alpha,
            mode=self.mode,
            freeze_A=self.freeze_A,
        )


AdapterSet = dict[int, AdapterState]


def _check_weight(weight: Matrix, ad: AdapterState, what: str) -> None:
    if weight.shape != (ad.m, ad.n):
        raise ShapeMismatchError(
            f"{what} shape {weight.shape} does not match adapter ({ad.m}, {ad.n})"
        )


def adapter_forward(x: Matrix, W0: Matrix, ad: AdapterState) -> Matrix:
    """x @ W0 + s * ((x @ A) @ B), never forming the merged weight."""
    _check_weight(W0, ad, "W0")
    if x.shape[-1] != ad.m:
        raise ShapeMismatchError(
            f"layer input {x.shape} does not match adapter in_dim {ad.m}"
        )
    return x @ W0 + ad.scale * ((x @ ad.A) @ ad.B)


def adapter_grads(g: Matrix, ad: AdapterState) -> tuple[Matrix, Matrix]:
    """Gradients of A and B from the effective-weight gradient g.

    gA = s * g @ B^T and gB = s * A^T @ g; gA is zero when A is frozen.
    """
    _check_weight(g, ad, "upstream weight gradient")
    scale = ad.scale
    grad_b = scale * (ad.A.T @ g)
    if ad.freeze_A:
        grad_a = np.zeros_like(ad.A)
    else:
        grad_a = scale * (g @ ad.B.T)
    return grad_a, grad_b


def delta(ad: AdapterState) -> Matrix:
    """Weight update s * A @ B represented by the adapter."""
    return ad.scale * (ad.A @ ad.B)


def merge(W0: Matrix, ad: AdapterState) -> Matrix:
    """W0 + delta(ad) as a new matrix."""
    _check_weight(W0, ad, "W0")
    return W0 + delta(ad)
