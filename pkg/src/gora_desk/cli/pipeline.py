"""Pipeline stages: probe -> allocate -> init -> train.

Every stage reads its inputs from the output directory, writes its artifacts
next to them and updates manifest.json, so any stage can be replayed from the
serialized upstream artifacts alone.
"""

import itertools
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from ..adapter import AdapterSet, load_adapters, save_adapters
from ..allocate import RankPlan, fixed_rank_plan, plan_ranks
from ..ddpsim import ddp_allocate_and_init, ddp_probe
from ..errors import ConfigError, StageOrderError
from ..gorainit import InitReport, gora_factors, gora_initialize, lora_initialize
from ..netcore import (
    Batch,
    Network,
    make_cluster_classification_task,
    make_lowrank_teacher_task,
)
from ..netcore.storage import load_batches, load_network, save_batches, save_network
from ..numerics import Rng, derive_seed
from ..probe import ProbeResult, load_probe, probe_weights, run_probe, save_probe
from ..trainkit import autotune_gamma, train
from .config import AUTO, AdapterMethod, RunConfig, TaskFamily
from .manifest import (
    MANIFEST_NAME,
    new_manifest,
    read_manifest,
    record_artifact,
    write_manifest,
)

logger = logging.getLogger(__name__)

ARTIFACTS = {
    "batches": "batches.gbat",
    "eval_batch": "eval.gbat",
    "base": "base.gnet",
    "probe": "probe.gprb",
    "plan_table": "plan.txt",
    "plan": "plan.json",
    "adapters": "adapters.gadp",
    "init_report": "init_report.json",
    "trained_adapters": "adapters_trained.gadp",
    "train_record": "train_record.csv",
    "summary": "summary.json",
}

# stage that produces each artifact, for stage-order messages
PRODUCED_BY = {
    "batches": "probe",
    "eval_batch": "probe",
    "base": "probe",
    "probe": "probe",
    "plan": "allocate",
    "adapters": "init",
}


@dataclass
class RunContext:
    """Resolved config, output directory and the manifest being updated."""

    cfg: RunConfig
    out_dir: Path
    manifest: dict[str, Any]

    @classmethod
    def open(cls, cfg: RunConfig, out_dir: Path | None = None) -> "RunContext":
        out = Path(out_dir if out_dir is not None else cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        record = cfg.model_dump(mode="json")
        if (out / MANIFEST_NAME).is_file():
            manifest = read_manifest(out)
            manifest["config"] = record
        else:
            manifest = new_manifest(record)
        return cls(cfg=cfg, out_dir=out, manifest=manifest)

    def path(self, name: str) -> Path:
        return self.out_dir / ARTIFACTS[name]

    def require(self, name: str, stage: str) -> Path:
        path = self.path(name)
        if not path.is_file():
            raise StageOrderError(
                f"{stage}: missing {path.name} in {self.out_dir}; "
                f"run the '{PRODUCED_BY[name]}' stage first"
            )
        return path

    def record(self, name: str) -> None:
        record_artifact(self.manifest, self.out_dir, name, ARTIFACTS[name])

    def write_json(self, name: str, payload: dict[str, Any]) -> None:
        self.path(name).write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        self.record(name)

    def finish(self, stage: str, seconds: float) -> None:
        self.manifest["timings"][stage] = seconds
        write_manifest(self.out_dir, self.manifest)


def build_task(cfg: RunConfig) -> tuple[Network, list[Batch], Batch]:
    """Frozen base network, training batches and evaluation batch for a config."""
    task = cfg.task
    rng = Rng(derive_seed(cfg.task_seed, "task"))
    if task.family is TaskFamily.TEACHER:
        built = make_lowrank_teacher_task(
            rng,
            task.m,
            task.n,
            task.r_true,
            task.n_samples,
            task.noise_std,
            batch_size=task.batch_size,
            n_eval=task.n_eval,
            hidden=tuple(cfg.model.hidden),
            layer_strengths=(
                tuple(task.layer_strengths) if task.layer_strengths is not None else None
            ),
        )
    else:
        built = make_cluster_classification_task(
            rng,
            task.m,
            task.classes,
            task.n_samples,
            separation=task.separation,
            batch_size=task.batch_size,
            n_eval=task.n_eval,
            hidden=tuple(cfg.model.hidden),
        )
    return built.network, built.train_batches, built.eval_batch


def probe_stream(batches: list[Batch], count: int) -> list[Batch]:
    """The first `count` batches of the training stream, cycling if it is shorter."""
    if not batches:
        return []
    return list(itertools.islice(itertools.cycle(batches), count))


def _load_net(ctx: RunContext, stage: str) -> Network:
    return load_network(ctx.require("base", stage)).freeze()


def cmd_probe(ctx: RunContext) -> dict[str, Any]:
    """Build the task, persist it and accumulate probe gradients."""
    start = time.perf_counter()
    cfg = ctx.cfg
    net, train_batches, eval_batch = build_task(cfg)
    save_network(ctx.path("base"), net)
    save_batches(ctx.path("batches"), train_batches)
    save_batches(ctx.path("eval_batch"), [eval_batch])
    for name in ("base", "batches", "eval_batch"):
        ctx.record(name)

    probe_cfg = cfg.probe_config()
    topology = cfg.topology_config()
    stream = probe_stream(train_batches, probe_cfg.max_steps)
    if topology.world_size > 1:
        # probe.steps counts batches; the distributed probe counts rounds
        rounds = max(1, probe_cfg.max_steps // topology.world_size)
        outcome = ddp_probe(
            net, stream, topology, probe_cfg.model_copy(update={"max_steps": rounds})
        )
        result = outcome.result
    else:
        result = run_probe(net, stream, probe_cfg)
    save_probe(ctx.path("probe"), result)
    ctx.record("probe")

    summary = {
        "steps_used": result.steps_used,
        "batches_consumed": result.batches_consumed,
        "adaptive": result.adaptive,
        "peak_host_bytes": result.peak_host_bytes,
        "world_size": topology.world_size,
        "layers": result.layers,
    }
    ctx.manifest["probe"] = summary
    ctx.finish("probe", time.perf_counter() - start)
    return summary


def _load_probe_inputs(ctx: RunContext, stage: str) -> tuple[Network, ProbeResult]:
    net = _load_net(ctx, stage)
    probe = load_probe(ctx.require("probe", stage))
    return net, probe


def _make_plan(cfg: RunConfig, net: Network, probe: ProbeResult) -> RankPlan:
    weights = probe_weights(net, probe)
    if cfg.adapter.method is AdapterMethod.LORA:
        return fixed_rank_plan(weights, cfg.adapter.r_ref, cfg.adapter.metric)
    return plan_ranks(weights, probe.grads, cfg.alloc_config())


def cmd_allocate(ctx: RunContext) -> dict[str, Any]:
    """Turn probe gradients into a rank plan."""
    start = time.perf_counter()
    net, probe = _load_probe_inputs(ctx, "allocate")
    plan = _make_plan(ctx.cfg, net, probe)
    ctx.path("plan_table").write_text(plan.to_table() + "\n", encoding="utf-8")
    ctx.record("plan_table")
    ctx.write_json("plan", plan.to_record())

    summary = {
        "ranks": plan.ranks,
        "params_allocated": plan.params_allocated,
        "params_lora_equivalent": plan.params_lora_equivalent,
        "param_deviation": plan.param_deviation,
        "unclipped_param_deviation": plan.unclipped_param_deviation,
        "clipped_layers": plan.clipped_layers,
    }
    ctx.manifest["plan"] = plan.to_record()
    ctx.finish("allocate", time.perf_counter() - start)
    return summary


def _load_plan(ctx: RunContext, stage: str) -> RankPlan:
    path = ctx.require("plan", stage)
    return RankPlan.from_record(json.loads(path.read_text(encoding="utf-8")))


def _resolve_gamma(
    cfg: RunConfig, net: Network, plan: RankPlan, probe: ProbeResult, first_batch: Batch
) -> float | None:
    """Configured gamma, or the autotuned one when adapter.gamma = auto."""
    if cfg.adapter.method is AdapterMethod.LORA or cfg.adapter.gamma != AUTO:
        return None
    init_cfg = cfg.init_config()
    factors = gora_factors(plan, probe.grads, init_cfg)
    return autotune_gamma(net, factors, first_batch, init_cfg)


def cmd_init(ctx: RunContext) -> dict[str, Any]:
    """Initialize adapters from the plan and the probe gradients."""
    start = time.perf_counter()
    cfg = ctx.cfg
    net, probe = _load_probe_inputs(ctx, "init")
    plan = _load_plan(ctx, "init")
    batches = load_batches(ctx.require("batches", "init"))
    if not batches:
        raise StageOrderError(f"init: {ctx.path('batches').name} holds no batches")

    gamma = _resolve_gamma(cfg, net, plan, probe, batches[0])
    init_cfg = cfg.init_config(gamma)
    topology = cfg.topology_config()
    adapters: AdapterSet
    if cfg.adapter.method is AdapterMethod.LORA:
        adapters = lora_initialize(plan, init_cfg)
        report = InitReport(gamma=0.0, calibration=init_cfg.calibration)
    elif topology.world_size > 1:
        outcome = ddp_allocate_and_init(
            net, probe, topology, cfg.alloc_config(), init_cfg
        )
        if outcome.plan.to_record() != plan.to_record():
            raise ConfigError(
                "distributed allocation disagrees with plan.json; "
                "re-run the allocate stage with the current config"
            )
        adapters, report = outcome.worker_adapters[0], outcome.report
        ctx.manifest["topology"] = {
            "world_size": topology.world_size,
            "reduce_mode": topology.reduce_mode.value,
            "events": [vars(event).copy() for event in outcome.events],
            "checksums": outcome.checksums,
        }
    else:
        adapters, report = gora_initialize(plan, probe.grads, init_cfg)

    save_adapters(ctx.path("adapters"), adapters)
    ctx.record("adapters")
    ctx.write_json("init_report", report.to_record())

    summary = {
        "method": cfg.adapter.method.value,
        "gamma": init_cfg.gamma,
        "gamma_autotuned": gamma is not None,
        "init_seconds": report.init_seconds,
        "layers": sorted(adapters),
    }
    ctx.manifest["init_report"] = report.to_record()
    ctx.finish("init", time.perf_counter() - start)
    return summary


def cmd_train(ctx: RunContext) -> dict[str, Any]:
    """Train the initialized adapters and record losses."""
    start = time.perf_counter()
    cfg = ctx.cfg
    net = _load_net(ctx, "train")
    adapters = load_adapters(ctx.require("adapters", "train"))
    batches = load_batches(ctx.require("batches", "train"))
    (eval_batch,) = load_batches(ctx.require("eval_batch", "train"))

    record = train(
        net,
        adapters,
        batches,
        cfg.train.optim,
        cfg.train.steps,
        eval_batch=eval_batch,
        seed=cfg.seed,
        check_base=cfg.train.check_base,
    )
    save_adapters(ctx.path("trained_adapters"), adapters)
    ctx.record("trained_adapters")
    record.write_csv(ctx.path("train_record"))
    ctx.record("train_record")
    summary = record.summary()
    ctx.write_json("summary", summary)

    ctx.manifest["train"] = summary
    ctx.finish("train", time.perf_counter() - start)
    return summary


STAGES = {
    "probe": cmd_probe,
    "allocate": cmd_allocate,
    "init": cmd_init,
    "train": cmd_train,
}


def cmd_pipeline(ctx: RunContext) -> dict[str, Any]:
    """Run every stage in order; returns each stage's summary."""
    return {name: stage(ctx) for name, stage in STAGES.items()}
