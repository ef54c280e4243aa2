"""Run manifest: one JSON file per output directory, updated by every stage."""

import hashlib
import json
import platform
from importlib import metadata
from pathlib import Path
from typing import Any

import numpy as np
import pydantic

from .. import __version__
from ..errors import ArtifactFormatError

SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"

# Artifacts whose bytes depend only on the config; timing-bearing JSON is left out
DETERMINISTIC_ARTIFACTS = (
    "batches",
    "eval_batch",
    "base",
    "probe",
    "plan_table",
    "plan",
    "adapters",
    "trained_adapters",
    "train_record",
)


def package_version() -> str:
    try:
        return metadata.version("gora-desk")
    except metadata.PackageNotFoundError:
        return __version__


def versions() -> dict[str, str]:
    return {
        "gora_desk": package_version(),
        "numpy": np.__version__,
        "pydantic": pydantic.VERSION,
        "python": platform.python_version(),
    }


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def new_manifest(config_record: dict[str, Any]) -> dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "config": config_record,
        "versions": versions(),
        "timings": {},
        "artifacts": {},
        "checksums": {},
    }


def read_manifest(path: Path) -> dict[str, Any]:
    """Load a manifest file or a directory containing one.

    Raises:
        ArtifactFormatError: If the file is missing, not JSON, or of another schema.
    """
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.is_file():
        raise ArtifactFormatError(f"manifest not found: {path}")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ArtifactFormatError(f"manifest {path} is not valid JSON: {e}") from e
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ArtifactFormatError(
            f"manifest {path} has schema_version {manifest.get('schema_version')!r}, "
            f"expected {SCHEMA_VERSION}"
        )
    return manifest


def write_manifest(out_dir: Path, manifest: dict[str, Any]) -> Path:
    path = Path(out_dir) / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def record_artifact(
    manifest: dict[str, Any], out_dir: Path, name: str, filename: str
) -> None:
    """Register an artifact path and, when deterministic, its checksum."""
    manifest["artifacts"][name] = filename
    if name in DETERMINISTIC_ARTIFACTS:
        manifest["checksums"][name] = sha256_file(Path(out_dir) / filename)
