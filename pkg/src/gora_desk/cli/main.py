"""gora-desk command line: stage dispatch, logging setup and exit codes."""

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any

from dotenv import load_dotenv

from ..errors import ConfigError, GoraError, VerificationError
from ..logging_config import log_stage, setup_logging
from .config import RunConfig, bundled_config, load_run_config
from .pipeline import STAGES, RunContext, cmd_pipeline
from .report import cmd_report
from .verify import SUITES, cmd_verify

logger = logging.getLogger(__name__)

STAGE_COMMANDS = (*STAGES, "pipeline")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gora-desk",
        description="Gradient-driven rank allocation and initialization for low-rank adapters",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    for name in STAGE_COMMANDS:
        sub = commands.add_parser(name, help=f"run the {name} stage")
        sub.add_argument(
            "--config",
            default="teacher",
            help="run-config file, or a bundled config name (teacher, hetero, clusters)",
        )
        sub.add_argument("--out", type=Path, help="output directory (overrides config)")
        sub.add_argument("--seed", type=int, help="root seed override")
        sub.add_argument("--workers", type=int, help="simulated data-parallel workers")

    verify = commands.add_parser("verify", help="run verification suites")
    verify.add_argument(
        "--suite", default="all", choices=["all", *SUITES], help="suite to run"
    )
    verify.add_argument("--seed", type=int, default=0, help="root seed")
    verify.add_argument("--out", type=Path, help="also write verify.json here")

    report = commands.add_parser("report", help="compare finished runs")
    report.add_argument("manifests", nargs="+", type=Path, help="run dirs or manifests")
    report.add_argument("--out", type=Path, help="write report.csv and curves.csv here")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    path = Path(args.config)
    if not path.is_file():
        try:
            path = bundled_config(args.config)
        except ConfigError:
            raise ConfigError(f"config file not found: {args.config}") from None
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.workers is not None:
        overrides["topology.world_size"] = str(args.workers)
    return load_run_config(path, overrides)


def _print_stage(name: str, summary: dict[str, Any]) -> None:
    if name == "probe":
        print(
            f"probe: {summary['steps_used']} steps, {summary['batches_consumed']} batches, "
            f"host buffer peak {summary['peak_host_bytes']} bytes"
        )
    elif name == "allocate":
        print(
            f"allocate: ranks {summary['ranks']}, params {summary['params_allocated']} "
            f"(LoRA-equivalent {summary['params_lora_equivalent']}, "
            f"deviation {summary['param_deviation']:+.2%})"
        )
    elif name == "init":
        print(
            f"init: {summary['method']} gamma={summary['gamma']:.4e}, "
            f"took {summary['init_seconds'] * 1000:.3f} ms"
        )
    elif name == "train":
        final = summary["final_eval_loss"]
        print(
            f"train: {summary['steps']} steps, final eval loss "
            f"{'-' if final is None else f'{final:.6e}'}"
        )


def run_stage_command(args: argparse.Namespace) -> dict[str, Any]:
    ctx = RunContext.open(resolve_config(args), args.out)
    if args.command == "pipeline":
        summaries = cmd_pipeline(ctx)
    else:
        summaries = {args.command: STAGES[args.command](ctx)}
    for name, summary in summaries.items():
        _print_stage(name, summary)
    print(f"artifacts in {ctx.out_dir}")
    return summaries


def run_verify_command(args: argparse.Namespace) -> dict[str, Any]:
    rows = cmd_verify(args.suite, args.seed, args.out)
    print(json.dumps(rows, indent=2))
    failed = [row for row in rows if not row["passed"]]
    if failed:
        cases = ", ".join(f"{row['suite']}/{row['case']}" for row in failed)
        raise VerificationError(f"{len(failed)} of {len(rows)} checks failed: {cases}")
    return {"checks": len(rows), "failed": 0}


def run_report_command(args: argparse.Namespace) -> dict[str, Any]:
    print(cmd_report(args.manifests, args.out))
    return {"runs": len(args.manifests)}


COMMAND_HANDLERS = {
    **{name: run_stage_command for name in STAGE_COMMANDS},
    "verify": run_verify_command,
    "report": run_report_command,
}


def main(argv: list[str] | None = None) -> int:
    """Parse arguments, run one command and return its exit code."""
    args = build_parser().parse_args(argv)
    load_dotenv("env/.env")
    setup_logging()

    handler = COMMAND_HANDLERS[args.command]
    arguments = {key: str(value) for key, value in vars(args).items() if value is not None}
    start_time = time.perf_counter()
    try:
        result = handler(args)
    except GoraError as e:
        duration_ms = (time.perf_counter() - start_time) * 1000
        log_stage(logger, args.command, arguments, error=e, duration_ms=duration_ms)
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    duration_ms = (time.perf_counter() - start_time) * 1000
    log_stage(logger, args.command, arguments, result=result, duration_ms=duration_ms)
    return 0
