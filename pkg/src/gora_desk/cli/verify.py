"""Verification suites: numerical oracles and module property checks.

Each suite returns CheckRow entries; a failing case is report content, not
an exception. The command line raises VerificationError afterwards when any
row failed.
"""

import json
import logging
import math
import time
from collections.abc import Callable
from dataclasses import asdict, dataclass
from functools import partial
from pathlib import Path

import numpy as np

from ..adapter import AdapterState, ScalingMode, adapter_bytes, adapter_grads, delta
from ..allocate import AllocConfig, allocate_ranks, fixed_rank_plan, plan_ranks
from ..ddpsim import WorkerTopology, ddp_allocate_and_init, ddp_probe
from ..errors import ConfigError
from ..gorainit import (
    InitConfig,
    XiCalibration,
    calibrated_xi,
    compress_init_B,
    frobenius_expectation_oracle,
    gora_factors,
    gora_initialize,
    init_A,
    lora_initialize,
    reconstruction_error,
    scale_factors,
)
from ..netcore import (
    Activation,
    Batch,
    LayerSpec,
    LossKind,
    Network,
    build_network,
    evaluate_loss,
    forward_backward,
)
from ..numerics import Matrix, Rng, derive_seed, projector, sample_gaussian
from ..probe import ProbeConfig, probe_weights, run_probe
from ..trainkit import (
    AdapterOptimizer,
    DecayKind,
    OptimAlgorithm,
    OptimConfig,
    autotune_gamma,
    gamma_grid,
)
from .config import RunConfig, bundled_config, load_run_config
from .pipeline import build_task, probe_stream

logger = logging.getLogger(__name__)


@dataclass
class CheckRow:
    suite: str
    case: str
    measured: float
    bound: float
    passed: bool

    def to_record(self) -> dict:
        return asdict(self)


def _row(suite: str, case: str, measured: float, bound: float, passed: bool) -> CheckRow:
    return CheckRow(suite, case, float(measured), float(bound), bool(passed))


def _teacher_config(seed: int, **overrides: str) -> RunConfig:
    values = {"seed": str(seed), **overrides}
    return load_run_config(bundled_config("teacher"), values)


def _hetero_config(seed: int, **overrides: str) -> RunConfig:
    values = {"seed": str(seed), **overrides}
    return load_run_config(bundled_config("hetero"), values)


def suite_projection(seed: int, pairs: int = 200, perturbations: int = 100) -> list[CheckRow]:
    """Least-squares optimality of the pseudo-inverse projection."""
    worst_residual = 0.0
    violations = 0
    passed = 0
    for pair in range(pairs):
        rng = Rng(derive_seed(seed, "verify_projection", pair))
        a0 = sample_gaussian(rng, 64, 8)
        g = sample_gaussian(rng, 64, 64)
        b_hat = -compress_init_B(a0, g)
        residual = np.linalg.norm(a0.T @ (g - a0 @ b_hat))
        ratio = residual / max(1.0, np.linalg.norm(a0.T @ g))
        worst_residual = max(worst_residual, ratio)
        best = np.linalg.norm(g - a0 @ b_hat)
        pair_violations = 0
        for k in range(perturbations):
            noise = sample_gaussian(rng.spawn("perturbation", k), 8, 64)
            if np.linalg.norm(g - a0 @ (b_hat + 0.1 * noise)) < best:
                pair_violations += 1
        violations += pair_violations
        if ratio <= 1e-10 and pair_violations == 0:
            passed += 1
    return [
        _row("projection", "normal_equation_residual", worst_residual, 1e-10, worst_residual <= 1e-10),
        _row("projection", "perturbation_improvements", violations, 0, violations == 0),
        _row("projection", "cases_passed", passed, pairs, passed == pairs),
    ]


def suite_frobenius(seed: int, trials: int = 500) -> list[CheckRow]:
    """Expected projected norm sqrt(n r) and projector trace r."""
    m = n = 64
    r = 8
    rng = Rng(derive_seed(seed, "verify_frobenius"))
    mean = frobenius_expectation_oracle(rng, m, n, r, trials)
    expected = math.sqrt(n * r)
    rel = abs(mean - expected) / expected
    trace = float(np.trace(projector(sample_gaussian(rng.spawn("trace"), m, r))))
    return [
        _row("frobenius", "expected_norm_rel_error", rel, 0.02, rel <= 0.02),
        _row("frobenius", "projector_trace_error", abs(trace - r), 1e-6, abs(trace - r) <= 1e-6),
    ]


def suite_allocation(seed: int) -> list[CheckRow]:
    """Hand-computed ranks, the homogeneous case and budget adherence."""
    rows = []
    hand = allocate_ranks(AllocConfig(r_ref=8), [(8, 8), (8, 8)], [0.75, 0.25])
    unclipped = [rec.unclipped_rank for rec in hand.records]
    mismatch = abs(unclipped[0] - 12) + abs(unclipped[1] - 4)
    rows.append(_row("allocation", "hand_case_unclipped_12_4", mismatch, 0, mismatch == 0))
    clipped = [rec.rank for rec in hand.records]
    rows.append(
        _row("allocation", "hand_case_clipped_to_min_dim", abs(clipped[0] - 8) + abs(clipped[1] - 4), 0, clipped == [8, 4])
    )

    uniform = allocate_ranks(AllocConfig(r_ref=8), [(32, 32)] * 3, [1 / 3] * 3)
    off = sum(abs(rank - 8) for rank in uniform.ranks.values())
    rows.append(_row("allocation", "homogeneous_equals_r_ref", off, 0, off == 0))

    cfg = _hetero_config(seed)
    net, batches, _ = build_task(cfg)
    probe_cfg = cfg.probe_config()
    probe = run_probe(net, probe_stream(batches, probe_cfg.max_steps), probe_cfg)
    plan = plan_ranks(probe_weights(net, probe), probe.grads, cfg.alloc_config())
    deviation = abs(plan.unclipped_param_deviation)
    rows.append(_row("allocation", "hetero_budget_deviation", deviation, 0.10, deviation <= 0.10))
    return rows


def suite_compressor(seed: int, steps: int = 50, lr: float = 1e-2) -> list[CheckRow]:
    """Frozen-A training with zero B0 and SGD accumulates projected gradients."""
    cfg = _teacher_config(seed, **{"adapter.freeze_A": "true", "adapter.method": "lora"})
    net, batches, _ = build_task(cfg)
    plan = fixed_rank_plan({0: net.layers[0].weight}, cfg.adapter.r_ref)
    adapters = lora_initialize(plan, cfg.init_config())
    ad = adapters[0]
    a0 = ad.A.copy()
    optim = AdapterOptimizer(
        OptimConfig(
            algorithm=OptimAlgorithm.SGD,
            lr=lr,
            b_lr_ratio=1.0,
            warmup_ratio=0.0,
            decay=DecayKind.NONE,
        )
    )
    grad_sum = np.zeros_like(net.layers[0].weight)
    for step in range(steps):
        _, grads = forward_backward(net, batches[step % len(batches)], adapters)
        grad_sum += grads[0]
        optim.step(adapters, {0: adapter_grads(grads[0], ad)}, lr, step_index=step)
    expected = -lr * ad.scale**2 * (a0 @ a0.T @ grad_sum)
    error = float(np.linalg.norm(delta(ad) - expected))
    return [_row("compressor", "frozen_A_identity", error, 1e-10, error <= 1e-10)]


def suite_init_step(seed: int, gamma: float = 0.05) -> list[CheckRow]:
    """Initial delta equals -gamma P G; gamma = 0 reproduces zero-init LoRA."""
    rng = Rng(derive_seed(seed, "verify_init_step"))
    m, n, r = 32, 32, 8
    weights = {0: sample_gaussian(rng.spawn("weight"), m, n)}
    grads = {0: sample_gaussian(rng.spawn("grad"), m, n)}
    plan = fixed_rank_plan(weights, r)
    cfg = InitConfig(gamma=gamma, calibration=XiCalibration.PROJECTOR, seed=seed)
    adapters, _ = gora_initialize(plan, grads, cfg)
    a0 = adapters[0].A
    expected = -gamma * (a0 @ np.linalg.pinv(a0)) @ grads[0]
    error = float(np.linalg.norm(delta(adapters[0]) - expected))

    zero_cfg = cfg.model_copy(update={"gamma": 0.0})
    gora_zero, _ = gora_initialize(plan, grads, zero_cfg)
    identical = adapter_bytes(gora_zero) == adapter_bytes(lora_initialize(plan, zero_cfg))
    return [
        _row("init_step", "delta_equals_minus_gamma_PG", error, 1e-10, error <= 1e-10),
        _row("init_step", "gamma_zero_matches_lora_bytes", 0 if identical else 1, 0, identical),
    ]


def suite_reconstruction(seed: int, seeds: int = 200) -> list[CheckRow]:
    """Random-gradient baseline sqrt(1 - r/m) and a gradient inside col(A0)."""
    m, n, r = 64, 64, 8
    gamma, alpha = 0.05, 16.0
    mode = ScalingMode.RSLORA
    s = mode.scale(alpha, r)
    factor = calibrated_xi(gamma, alpha, m, r, mode, XiCalibration.PROJECTOR)
    errors = []
    for trial in range(seeds):
        rng = Rng(derive_seed(seed, "verify_reconstruction", trial))
        a0 = init_A(rng.spawn("A"), m, r)
        g = sample_gaussian(rng.spawn("G"), m, n)
        _, rel = reconstruction_error(a0, factor * compress_init_B(a0, g), g, gamma, s)
        errors.append(rel)
    baseline = math.sqrt(1 - r / m)
    gap = abs(float(np.mean(errors)) - baseline)

    rng = Rng(derive_seed(seed, "verify_reconstruction_lowrank"))
    a0 = init_A(rng.spawn("A"), m, r)
    g = a0 @ sample_gaussian(rng.spawn("C"), r, n)
    _, low_rank = reconstruction_error(a0, factor * compress_init_B(a0, g), g, gamma, s)
    return [
        _row("reconstruction", "random_gradient_baseline_gap", gap, 0.02, gap <= 0.02),
        _row("reconstruction", "low_rank_gradient_rel_error", low_rank, 0.2, low_rank <= 0.2),
    ]


def suite_ddp(seed: int, steps: int = 8) -> list[CheckRow]:
    """Distributed probe, plan and adapters match the single-worker run bitwise."""
    cfg = _teacher_config(seed)
    net, batches, _ = build_task(cfg)
    stream = probe_stream(batches, steps)
    probe_cfg = ProbeConfig(max_steps=steps)
    single = run_probe(net, stream, probe_cfg)
    alloc_cfg = cfg.alloc_config()
    init_cfg = cfg.init_config()
    single_plan = plan_ranks(probe_weights(net, single), single.grads, alloc_cfg)
    single_adapters, _ = gora_initialize(single_plan, single.grads, init_cfg)
    single_bytes = adapter_bytes(single_adapters)

    rows = []
    for world in (1, 2, 4):
        topology = WorkerTopology(world_size=world)
        outcome = ddp_probe(
            net, stream, topology, probe_cfg.model_copy(update={"max_steps": steps // world})
        )
        result = outcome.result
        same_grads = all(
            result.grads[layer].tobytes() == single.grads[layer].tobytes()
            for layer in single.layers
        )
        init = ddp_allocate_and_init(net, result, topology, alloc_cfg, init_cfg)
        same_plan = init.plan.to_record() == single_plan.to_record()
        same_adapters = all(
            adapter_bytes(adapters) == single_bytes for adapters in init.worker_adapters
        )
        same_peak = result.peak_host_bytes == single.peak_host_bytes
        for case, ok in (
            ("probe_grads", same_grads),
            ("rank_plan", same_plan),
            ("adapters", same_adapters),
            ("peak_host_bytes", same_peak),
        ):
            rows.append(_row("ddp", f"W={world}_{case}", 0 if ok else 1, 0, ok))
    return rows


def suite_autotune(seed: int, tasks: int = 5) -> list[CheckRow]:
    """Autotuned gamma equals the brute-force argmin over the grid."""
    grid = gamma_grid()
    rows = [
        _row("autotune", "grid_size", len(grid), 95, len(grid) == 95),
        _row("autotune", "grid_min", min(grid), 5e-5, min(grid) >= 5e-5 and max(grid) <= 1.0),
    ]
    for task in range(tasks):
        cfg = _teacher_config(seed + task, **{"probe.steps": "8"})
        net, batches, _ = build_task(cfg)
        probe_cfg = cfg.probe_config()
        probe = run_probe(net, probe_stream(batches, probe_cfg.max_steps), probe_cfg)
        plan = plan_ranks(probe_weights(net, probe), probe.grads, cfg.alloc_config())
        init_cfg = cfg.init_config()
        factors = gora_factors(plan, probe.grads, init_cfg)
        chosen = autotune_gamma(net, factors, batches[0], init_cfg)
        losses = [
            evaluate_loss(net, batches[0], scale_factors(factors, gamma, init_cfg))
            for gamma in grid
        ]
        brute = grid[int(np.argmin(losses))]
        rows.append(
            _row("autotune", f"task_{task}_argmin", abs(chosen - brute), 0, chosen == brute)
        )
    return rows


def suite_adaptive_n(seed: int, seeds: int = 5) -> list[CheckRow]:
    """Adaptive N stops at step 2 on a repeated batch and keeps the full-N plan."""
    cfg = _hetero_config(seed, **{"adapter.r_ref": "4"})
    net, batches, _ = build_task(cfg)
    adaptive = ProbeConfig(max_steps=64, adaptive=True)
    repeated = run_probe(net, [batches[0]] * 64, adaptive)
    rows = [
        _row("adaptive_n", "repeated_batch_steps", repeated.steps_used, 2, repeated.steps_used == 2)
    ]
    stable = 0
    worst_steps = 0
    for offset in range(seeds):
        cfg = _hetero_config(seed + offset, **{"adapter.r_ref": "4"})
        net, batches, _ = build_task(cfg)
        stream = probe_stream(batches, 64)
        full = run_probe(net, stream, ProbeConfig(max_steps=64))
        early = run_probe(net, stream, adaptive)
        worst_steps = max(worst_steps, early.steps_used)
        alloc_cfg = cfg.alloc_config()
        full_plan = plan_ranks(probe_weights(net, full), full.grads, alloc_cfg)
        early_plan = plan_ranks(probe_weights(net, early), early.grads, alloc_cfg)
        stable += full_plan.ranks == early_plan.ranks
    rows.append(_row("adaptive_n", "max_steps_used", worst_steps, 64, worst_steps <= 64))
    rows.append(_row("adaptive_n", "plans_matching_full_n", stable, 4, stable >= 4))
    return rows


def _central_difference(
    loss: Callable[[], float], param: Matrix, h: float = 1e-5
) -> Matrix:
    grad = np.zeros_like(param)
    for index in np.ndindex(param.shape):
        original = param[index]
        param[index] = original + h
        plus = loss()
        param[index] = original - h
        minus = loss()
        param[index] = original
        grad[index] = (plus - minus) / (2 * h)
    return grad


def _relative(analytic: Matrix, numeric: Matrix) -> float:
    return float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12))


def _small_problem(seed: int, loss: LossKind) -> tuple[Network, Batch]:
    rng = Rng(derive_seed(seed, "verify_gradients", loss.value))
    specs = [
        LayerSpec(in_dim=5, out_dim=6, activation=Activation.TANH),
        LayerSpec(in_dim=6, out_dim=4, activation=Activation.RELU),
        LayerSpec(in_dim=4, out_dim=3),
    ]
    net = build_network(rng.spawn("net"), specs, loss, bias=True)
    inputs = sample_gaussian(rng.spawn("x"), 8, 5)
    if loss is LossKind.SOFTMAX_CROSS_ENTROPY:
        targets = np.eye(3)[rng.spawn("y").permutation(8) % 3]
    else:
        targets = sample_gaussian(rng.spawn("y"), 8, 3)
    return net, Batch(inputs=inputs, targets=targets)


def suite_gradients(seed: int, seeds: int = 20) -> list[CheckRow]:
    """Analytic network and adapter gradients against central differences."""
    worst_net = 0.0
    worst_adapter = 0.0
    for offset in range(seeds):
        for loss in LossKind:
            net, batch = _small_problem(seed + offset, loss)
            _, grads = forward_backward(net, batch)
            for index, layer in enumerate(net.layers):
                numeric = _central_difference(partial(evaluate_loss, net, batch), layer.weight)
                worst_net = max(worst_net, _relative(grads[index], numeric))

            rng = Rng(derive_seed(seed + offset, "verify_adapter", loss.value))
            weight = net.layers[1].weight
            ad = AdapterState(
                A=sample_gaussian(rng.spawn("A"), weight.shape[0], 2),
                B=sample_gaussian(rng.spawn("B"), 2, weight.shape[1]),
                alpha=2.0,
            )
            adapters = {1: ad}
            _, grads = forward_backward(net, batch, adapters)
            grad_a, grad_b = adapter_grads(grads[1], ad)
            for analytic, param in ((grad_a, ad.A), (grad_b, ad.B)):
                numeric = _central_difference(
                    partial(evaluate_loss, net, batch, adapters), param
                )
                worst_adapter = max(worst_adapter, _relative(analytic, numeric))
    return [
        _row("gradients", "network_max_rel_error", worst_net, 1e-6, worst_net <= 1e-6),
        _row("gradients", "adapter_max_rel_error", worst_adapter, 1e-6, worst_adapter <= 1e-6),
    ]


SUITES: dict[str, Callable[[int], list[CheckRow]]] = {
    "projection": suite_projection,
    "frobenius": suite_frobenius,
    "allocation": suite_allocation,
    "compressor": suite_compressor,
    "init_step": suite_init_step,
    "reconstruction": suite_reconstruction,
    "ddp": suite_ddp,
    "autotune": suite_autotune,
    "adaptive_n": suite_adaptive_n,
    "gradients": suite_gradients,
}


def run_suites(name: str, seed: int = 0) -> list[CheckRow]:
    """Run one suite, or every suite for name == 'all'."""
    if name == "all":
        selected = list(SUITES)
    elif name in SUITES:
        selected = [name]
    else:
        raise ConfigError(f"unknown suite {name!r}; choose from {', '.join(['all', *SUITES])}")
    rows: list[CheckRow] = []
    for suite in selected:
        start = time.perf_counter()
        suite_rows = SUITES[suite](seed)
        failed = sum(not row.passed for row in suite_rows)
        logger.info(
            f"Suite {suite}: {len(suite_rows) - failed}/{len(suite_rows)} passed",
            extra={"stage": "verify", "duration_ms": (time.perf_counter() - start) * 1000},
        )
        rows.extend(suite_rows)
    return rows


def cmd_verify(name: str = "all", seed: int = 0, out_dir: Path | None = None) -> list[dict]:
    """Run suites and return their rows as records; failures are rows, not errors.

    With `out_dir` the records are also written to verify.json there.
    """
    records = [row.to_record() for row in run_suites(name, seed)]
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "verify.json").write_text(
            json.dumps(records, indent=2) + "\n", encoding="utf-8"
        )
    return records
