"""Synthetic task generators.

Two families:
- low-rank teacher: a frozen linear base W0 whose targets come from
  W0 + dW* with rank(dW*) = r_true, the setting where a low-rank adapter is
  the right tool;
- cluster classification: Gaussian clusters with separable means.
"""

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..numerics import Matrix, Rng, sample_gaussian
from .network import (
    Activation,
    Batch,
    Layer,
    LayerSpec,
    LossKind,
    Network,
    build_network,
)

logger = logging.getLogger(__name__)


@dataclass
class TeacherTask:
    network: Network
    train_batches: list[Batch]
    eval_batch: Batch
    delta_star: list[Matrix]


@dataclass
class ClusterTask:
    network: Network
    train_batches: list[Batch]
    eval_batch: Batch
    means: Matrix


def _split(inputs: Matrix, targets: Matrix, batch_size: int) -> list[Batch]:
    n_batches = inputs.shape[0] // batch_size
    return [
        Batch(
            inputs=inputs[i * batch_size : (i + 1) * batch_size],
            targets=targets[i * batch_size : (i + 1) * batch_size],
        )
        for i in range(n_batches)
    ]


def make_lowrank_teacher_task(
    rng: Rng,
    m: int,
    n: int,
    r_true: int,
    n_samples: int,
    noise_std: float,
    batch_size: int = 16,
    n_eval: int = 256,
    hidden: tuple[int, ...] = (),
    layer_strengths: tuple[float, ...] | None = None,
) -> TeacherTask:
    """Linear teacher y = x (W0 + dW*) + noise with rank(dW*) = r_true per layer.

    With `hidden` widths the teacher is a chain of linear layers, each with its
    own base and perturbation; `layer_strengths` scales each perturbation so
    layers carry unequal amounts of signal.

    Returns:
        TeacherTask with the frozen-base network (W0 only), training batches,
        an evaluation batch and the hidden per-layer perturbations.

    Raises:
        ConfigError: If r_true exceeds a layer's min(in, out) or sizes are bad.
    """
    dims = [m, *hidden, n]
    n_layers = len(dims) - 1
    strengths = layer_strengths or (1.0,) * n_layers
    if len(strengths) != n_layers:
        raise ConfigError(
            f"layer_strengths has {len(strengths)} entries for {n_layers} layers"
        )
    if r_true < 0:
        raise ConfigError(f"r_true must be non-negative, got {r_true}")
    if n_samples < batch_size or batch_size < 1:
        raise ConfigError(
            f"n_samples={n_samples} must be at least batch_size={batch_size} >= 1"
        )

    layers = []
    delta_star = []
    teacher_weights = []
    for index, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:], strict=True)):
        if r_true > min(d_in, d_out):
            raise ConfigError(
                f"r_true={r_true} exceeds min(in, out)={min(d_in, d_out)} "
                f"for layer {index}"
            )
        base = sample_gaussian(rng.spawn("teacher_base", index), d_in, d_out)
        base /= np.sqrt(d_in)
        if r_true:
            delta_rng = rng.spawn("teacher_delta", index)
            u = sample_gaussian(delta_rng, d_in, r_true)
            v = sample_gaussian(delta_rng, r_true, d_out)
            delta = strengths[index] * (u @ v) / np.sqrt(r_true * d_in)
        else:
            delta = np.zeros((d_in, d_out))
        spec = LayerSpec(in_dim=d_in, out_dim=d_out, activation=Activation.LINEAR)
        layers.append(Layer(spec=spec, weight=base))
        delta_star.append(delta)
        teacher_weights.append(base + delta)

    def targets_for(x: Matrix, noise_rng: Rng) -> Matrix:
        y = x
        for weight in teacher_weights:
            y = y @ weight
        return y + noise_std * sample_gaussian(noise_rng, *y.shape)

    x_train = sample_gaussian(rng.spawn("teacher_inputs"), n_samples, m)
    y_train = targets_for(x_train, rng.spawn("teacher_noise"))
    x_eval = sample_gaussian(rng.spawn("teacher_eval_inputs"), n_eval, m)
    y_eval = targets_for(x_eval, rng.spawn("teacher_eval_noise"))

    train_batches = _split(x_train, y_train, batch_size)
    dropped = n_samples - len(train_batches) * batch_size
    if dropped:
        logger.warning(
            f"Dropped {dropped} samples that do not fill a batch",
            extra={"arguments": {"n_samples": n_samples, "batch_size": batch_size}},
        )

    network = Network(layers=layers, loss=LossKind.MSE).freeze()
    return TeacherTask(
        network=network,
        train_batches=train_batches,
        eval_batch=Batch(inputs=x_eval, targets=y_eval),
        delta_star=delta_star,
    )


def make_cluster_classification_task(
    rng: Rng,
    dims: int,
    classes: int,
    n_samples: int,
    separation: float = 10.0,
    batch_size: int = 16,
    n_eval: int = 256,
    hidden: tuple[int, ...] = (),
) -> ClusterTask:
    """Unit-variance Gaussian clusters whose means are `separation` apart.

    Means are (separation / sqrt(2)) * e_k, so any two are exactly
    `separation` apart; with more classes than dims, random unit directions
    are used instead. Labels are balanced and shuffled; targets are one-hot.

    Raises:
        ConfigError: If fewer than two classes are requested.
    """
    if classes < 2:
        raise ConfigError(f"classification needs at least 2 classes, got {classes}")
    if n_samples < batch_size or batch_size < 1:
        raise ConfigError(
            f"n_samples={n_samples} must be at least batch_size={batch_size} >= 1"
        )

    radius = separation / np.sqrt(2.0)
    if classes <= dims:
        means = radius * np.eye(classes, dims)
    else:
        directions = sample_gaussian(rng.spawn("cluster_means"), classes, dims)
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        means = radius * directions

    def sample(n: int, tag: str) -> tuple[Matrix, Matrix]:
        labels = np.arange(n) % classes
        labels = labels[rng.spawn(tag, 0).permutation(n)]
        x = means[labels] + sample_gaussian(rng.spawn(tag, 1), n, dims)
        return x, np.eye(classes)[labels]

    x_train, y_train = sample(n_samples, "cluster_train")
    x_eval, y_eval = sample(n_eval, "cluster_eval")

    widths = [dims, *hidden, classes]
    specs = [
        LayerSpec(
            in_dim=d_in,
            out_dim=d_out,
            activation=Activation.TANH if index < len(widths) - 2 else Activation.LINEAR,
        )
        for index, (d_in, d_out) in enumerate(zip(widths[:-1], widths[1:], strict=True))
    ]
    network = build_network(
        rng.spawn("cluster_network"), specs, loss=LossKind.SOFTMAX_CROSS_ENTROPY
    ).freeze()
    return ClusterTask(
        network=network,
        train_batches=_split(x_train, y_train, batch_size),
        eval_batch=Batch(inputs=x_eval, targets=y_eval),
        means=means,
    )
