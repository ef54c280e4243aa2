"""Optimizers, schedule, training loop and gamma search."""

from .autotune import autotune_gamma, gamma_grid, gamma_losses
from .loop import StepRecord, TrainRecord, read_train_csv, train
from .optim import AdapterOptimizer, DecayKind, OptimAlgorithm, OptimConfig
from .schedule import lr_at

__all__ = [
    "AdapterOptimizer",
    "DecayKind",
    "OptimAlgorithm",
    "OptimConfig",
    "StepRecord",
    "TrainRecord",
    "autotune_gamma",
    "gamma_grid",
    "gamma_losses",
    "lr_at",
    "read_train_csv",
    "train",
]
