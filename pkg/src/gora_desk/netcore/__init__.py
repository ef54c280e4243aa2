"""Feedforward substrate: network, exact gradients, synthetic tasks, storage."""

from .network import (
    Activation,
    Batch,
    Layer,
    LayerSpec,
    LossKind,
    Network,
    accuracy,
    build_network,
    evaluate_loss,
    forward_backward,
    predict,
)
from .tasks import (
    ClusterTask,
    TeacherTask,
    make_cluster_classification_task,
    make_lowrank_teacher_task,
)

__all__ = [
    "Activation",
    "Batch",
    "ClusterTask",
    "Layer",
    "LayerSpec",
    "LossKind",
    "Network",
    "TeacherTask",
    "accuracy",
    "build_network",
    "evaluate_loss",
    "forward_backward",
    "make_cluster_classification_task",
    "make_lowrank_teacher_task",
    "predict",
]
