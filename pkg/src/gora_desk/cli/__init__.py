"""Command-line front door: run configs, pipeline stages, verification, reports."""

from .config import RunConfig, build_run_config, bundled_config, load_run_config
from .main import main
from .manifest import read_manifest
from .pipeline import RunContext, cmd_allocate, cmd_init, cmd_pipeline, cmd_probe, cmd_train
from .report import cmd_report
from .verify import CheckRow, cmd_verify, run_suites

__all__ = [
    "CheckRow",
    "RunConfig",
    "RunContext",
    "build_run_config",
    "bundled_config",
    "cmd_allocate",
    "cmd_init",
    "cmd_pipeline",
    "cmd_probe",
    "cmd_report",
    "cmd_train",
    "cmd_verify",
    "load_run_config",
    "main",
    "read_manifest",
    "run_suites",
]
