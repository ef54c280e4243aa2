"""Pytest configuration and fixtures."""

import sys
from pathlib import Path

import pytest

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from gora_desk.cli.config import build_run_config
from gora_desk.netcore import make_lowrank_teacher_task
from gora_desk.numerics import Rng


@pytest.fixture
def rng():
    """Seeded random stream."""
    return Rng(1234)


@pytest.fixture
def teacher_task():
    """Small single-layer low-rank teacher (32x32, r_true=4, 64 batches)."""
    return make_lowrank_teacher_task(
        Rng(7), m=32, n=32, r_true=4, n_samples=1024, noise_std=0.01
    )


@pytest.fixture
def hetero_task():
    """Three-layer linear teacher with layer shapes 32x40, 40x40, 40x32."""
    return make_lowrank_teacher_task(
        Rng(11),
        m=32,
        n=32,
        r_true=4,
        n_samples=1024,
        noise_std=0.01,
        hidden=(40, 40),
        layer_strengths=(0.5, 1.0, 2.0),
    )


@pytest.fixture
def small_run_config(tmp_path):
    """Fast teacher run: 16x16 layer, 8 probe batches, 20 training steps."""
    return build_run_config(
        {
            "name": "small",
            "output": str(tmp_path / "run"),
            "task.m": "16",
            "task.n": "16",
            "task.r_true": "2",
            "task.n_samples": "256",
            "task.n_eval": "64",
            "adapter.r_ref": "4",
            "probe.steps": "8",
            "train.steps": "20",
        }
    )


@pytest.fixture
def test_env(monkeypatch, tmp_path):
    """Route log files into the test's temp directory."""
    monkeypatch.setenv("GORA_LOG_FILE", str(tmp_path / "logs" / "gora-desk.log"))
    monkeypatch.setenv("GORA_LOG_LEVEL", "DEBUG")
    monkeypatch.setenv("GORA_PROJECT_ROOT", str(tmp_path))
