"""Comparison tables over finished runs."""

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from ..errors import ArtifactFormatError
from ..trainkit import read_train_csv
from .manifest import read_manifest

METRICS = ("first_batch_loss", "final_train_loss", "final_eval_loss", "final_eval_accuracy")


@dataclass
class RunRow:
    family: str
    label: str
    seed: int
    params: int | None
    metrics: dict[str, float | None]
    curve: list[tuple[int, float]]


def load_run(path: Path) -> RunRow:
    """One report row from a manifest (or its run directory).

    Train losses are recomputed from the run's train_record.csv.
    """
    path = Path(path)
    run_dir = path if path.is_dir() else path.parent
    manifest = read_manifest(path)
    config = manifest["config"]
    artifacts = manifest.get("artifacts", {})
    if "train_record" not in artifacts:
        raise ArtifactFormatError(f"{run_dir}: run has no train_record; train it first")
    steps = read_train_csv(run_dir / artifacts["train_record"])
    train_summary = manifest.get("train", {})
    plan = manifest.get("plan", {})
    return RunRow(
        family=config["task"]["family"],
        label=f"{config['name']} ({config['adapter']['method']})",
        seed=int(config["seed"]),
        params=plan.get("params_allocated"),
        metrics={
            "first_batch_loss": steps[0].loss if steps else None,
            "final_train_loss": steps[-1].loss if steps else None,
            "final_eval_loss": train_summary.get("final_eval_loss"),
            "final_eval_accuracy": train_summary.get("final_eval_accuracy"),
        },
        curve=[(rec.step, rec.loss) for rec in steps],
    )


def _mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def aggregate(runs: list[RunRow]) -> dict[str, list[dict[str, Any]]]:
    """Rows grouped by task family, one per run label, mean and std over seeds."""
    grouped: dict[str, dict[str, list[RunRow]]] = defaultdict(lambda: defaultdict(list))
    for run in runs:
        grouped[run.family][run.label].append(run)

    sections: dict[str, list[dict[str, Any]]] = {}
    for family in sorted(grouped):
        rows = []
        for label in sorted(grouped[family]):
            members = grouped[family][label]
            row: dict[str, Any] = {
                "family": family,
                "label": label,
                "seeds": len(members),
                "params": members[0].params,
            }
            for metric in METRICS:
                values = [m.metrics[metric] for m in members if m.metrics[metric] is not None]
                if values:
                    row[f"{metric}_mean"], row[f"{metric}_std"] = _mean_std(values)
                else:
                    row[f"{metric}_mean"] = row[f"{metric}_std"] = None
            rows.append(row)
        sections[family] = rows
    return sections


def _cell(mean: float | None, std: float | None) -> str:
    if mean is None or math.isnan(mean):
        return "-"
    return f"{mean:.4e} ± {std:.1e}"


def format_table(sections: dict[str, list[dict[str, Any]]]) -> str:
    lines = []
    for family, rows in sections.items():
        lines.append(f"== {family} ==")
        header = f"{'run':<28} {'seeds':>5} {'params':>7} " + " ".join(
            f"{metric:>24}" for metric in METRICS
        )
        lines.append(header)
        for row in rows:
            cells = " ".join(
                f"{_cell(row[f'{m}_mean'], row[f'{m}_std']):>24}" for m in METRICS
            )
            params = "-" if row["params"] is None else str(row["params"])
            lines.append(f"{row['label']:<28} {row['seeds']:>5} {params:>7} {cells}")
        lines.append("")
    return "\n".join(lines)


def write_table_csv(path: Path, sections: dict[str, list[dict[str, Any]]]) -> None:
    fields = ["family", "label", "seeds", "params"]
    for metric in METRICS:
        fields += [f"{metric}_mean", f"{metric}_std"]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for rows in sections.values():
            writer.writerows(rows)


def write_curves_csv(path: Path, runs: list[RunRow]) -> None:
    """Long-format loss curves (label, seed, step, loss) for external plotting."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["family", "label", "seed", "step", "loss"])
        for run in runs:
            for step, loss in run.curve:
                writer.writerow([run.family, run.label, run.seed, step, repr(loss)])


def cmd_report(manifests: list[Path], out_dir: Path | None = None) -> str:
    """Aligned comparison table; with out_dir also report.csv and curves.csv."""
    if not manifests:
        raise ArtifactFormatError("report needs at least one manifest")
    runs = [load_run(path) for path in manifests]
    sections = aggregate(runs)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_table_csv(out_dir / "report.csv", sections)
        write_curves_csv(out_dir / "curves.csv", runs)
    return format_table(sections)
