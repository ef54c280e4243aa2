"""Run configuration: pydantic models plus the `key.path = value` file format.

Config files are dotenv-style lines parsed with python-dotenv:

    # low-rank teacher
    task.family = teacher
    task.m = 32
    model.hidden = 40, 40
    adapter.gamma = auto
    probe.steps = 64

Comma-separated values become lists, `none` becomes null, and `auto` selects
adaptive N (probe.steps) or adaptive gamma (adapter.gamma).
"""

from enum import Enum
from pathlib import Path
from typing import Any, Literal

from dotenv import dotenv_values
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from ..adapter import ScalingMode
from ..allocate import AllocConfig, ImportanceMetric
from ..ddpsim import ReduceMode, WorkerTopology
from ..errors import ConfigError
from ..gorainit import InitConfig, XiCalibration, default_gamma
from ..probe import ImportanceSource, ProbeConfig
from ..trainkit import OptimConfig

AUTO = "auto"


class TaskFamily(str, Enum):
    TEACHER = "teacher"
    CLUSTERS = "clusters"


class AdapterMethod(str, Enum):
    GORA = "gora"
    LORA = "lora"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _as_list(value: Any) -> Any:
    if value is None or value == "":
        return []
    if isinstance(value, str):
        return [value]
    return value


class TaskSpec(_Section):
    family: TaskFamily = TaskFamily.TEACHER
    m: int = Field(default=32, ge=1)
    n: int = Field(default=32, ge=1)
    r_true: int = Field(default=4, ge=0)
    layer_strengths: list[float] | None = None
    n_samples: int = Field(default=1024, ge=1)
    n_eval: int = Field(default=256, ge=1)
    batch_size: int = Field(default=16, ge=1)
    noise_std: float = Field(default=0.01, ge=0)
    classes: int = Field(default=4, ge=2)
    separation: float = Field(default=10.0, gt=0)
    seed: int | None = None

    @field_validator("layer_strengths", mode="before")
    @classmethod
    def strengths_list(cls, value: Any) -> Any:
        return None if value is None else _as_list(value)


class ModelSpec(_Section):
    hidden: list[int] = Field(default_factory=list)

    @field_validator("hidden", mode="before")
    @classmethod
    def hidden_list(cls, value: Any) -> Any:
        return _as_list(value)


class AdapterSpec(_Section):
    method: AdapterMethod = AdapterMethod.GORA
    mode: ScalingMode = ScalingMode.RSLORA
    alpha: float = Field(default=16.0, gt=0)
    r_ref: int = Field(default=8, ge=1)
    r_min: int | None = Field(default=None, ge=0)
    r_max: int | None = Field(default=None, ge=1)
    metric: ImportanceMetric = ImportanceMetric.SENSITIVITY
    gamma: float | Literal["auto"] | None = None
    calibration: XiCalibration = XiCalibration.EXPECTED_NORM
    freeze_A: bool = False
    max_reseeds: int = Field(default=3, ge=0)

    @field_validator("gamma")
    @classmethod
    def gamma_non_negative(cls, value: Any) -> Any:
        if isinstance(value, float) and value < 0:
            raise ValueError(f"gamma must be >= 0, got {value}")
        return value


class ProbeSpec(_Section):
    steps: int | Literal["auto"] = 64
    max_steps: int = Field(default=64, ge=1)
    threshold: float = Field(default=0.01, gt=0)
    importance_source: ImportanceSource = ImportanceSource.RUNNING_MEAN
    offload: bool = True

    @field_validator("steps")
    @classmethod
    def steps_positive(cls, value: Any) -> Any:
        if isinstance(value, int) and value < 1:
            raise ValueError(f"probe steps must be >= 1, got {value}")
        return value


class TrainSpec(_Section):
    steps: int = Field(default=200, ge=0)
    optim: OptimConfig = Field(default_factory=OptimConfig)
    check_base: bool = False


class TopologySpec(_Section):
    world_size: int = Field(default=1, ge=1)
    reduce_mode: ReduceMode = ReduceMode.REDUCE
    threaded: bool = False


class RunConfig(_Section):
    """Everything needed to reproduce one run."""

    name: str = "run"
    seed: int = 0
    output: str = "runs/default"
    task: TaskSpec = Field(default_factory=TaskSpec)
    model: ModelSpec = Field(default_factory=ModelSpec)
    adapter: AdapterSpec = Field(default_factory=AdapterSpec)
    probe: ProbeSpec = Field(default_factory=ProbeSpec)
    train: TrainSpec = Field(default_factory=TrainSpec)
    topology: TopologySpec = Field(default_factory=TopologySpec)

    @model_validator(mode="after")
    def cross_field(self) -> "RunConfig":
        try:
            self.alloc_config()
        except ValidationError as e:
            raise ValueError(f"adapter rank bounds: {format_validation_error(e)}") from e
        if self.task.family is TaskFamily.TEACHER:
            dims = [self.task.m, *self.model.hidden, self.task.n]
            narrowest = min(min(a, b) for a, b in zip(dims[:-1], dims[1:], strict=True))
            if self.task.r_true > narrowest:
                raise ValueError(
                    f"task.r_true={self.task.r_true} exceeds the narrowest layer "
                    f"min(in, out)={narrowest}"
                )
            strengths = self.task.layer_strengths
            if strengths is not None and len(strengths) != len(dims) - 1:
                raise ValueError(
                    f"task.layer_strengths needs {len(dims) - 1} values, "
                    f"got {len(strengths)}"
                )
        world = self.topology.world_size
        if isinstance(self.probe.steps, int) and self.probe.steps % world:
            raise ValueError(
                f"probe.steps={self.probe.steps} is not a multiple of "
                f"topology.world_size={world}"
            )
        if self.task.n_samples < self.task.batch_size:
            raise ValueError(
                f"task.n_samples={self.task.n_samples} is smaller than "
                f"task.batch_size={self.task.batch_size}"
            )
        return self

    @property
    def task_seed(self) -> int:
        return self.seed if self.task.seed is None else self.task.seed

    def alloc_config(self) -> AllocConfig:
        if self.adapter.method is AdapterMethod.LORA:
            bounds = {"r_min": self.adapter.r_ref, "r_max": self.adapter.r_ref}
        else:
            bounds = {"r_min": self.adapter.r_min, "r_max": self.adapter.r_max}
        return AllocConfig(r_ref=self.adapter.r_ref, metric=self.adapter.metric, **bounds)

    def probe_config(self) -> ProbeConfig:
        adaptive = self.probe.steps == AUTO
        return ProbeConfig(
            max_steps=self.probe.max_steps if adaptive else self.probe.steps,
            adaptive=adaptive,
            convergence_threshold=self.probe.threshold,
            offload=self.probe.offload,
            importance_source=self.probe.importance_source,
            metric=self.adapter.metric,
        )

    def init_config(self, gamma: float | None = None) -> InitConfig:
        """Init config; gamma defaults to the configured value or the r_ref default."""
        if gamma is None:
            if self.adapter.method is AdapterMethod.LORA:
                gamma = 0.0
            elif isinstance(self.adapter.gamma, float):
                gamma = self.adapter.gamma
            else:
                gamma = default_gamma(self.adapter.r_ref)
        return InitConfig(
            gamma=gamma,
            alpha=self.adapter.alpha,
            mode=self.adapter.mode,
            calibration=self.adapter.calibration,
            seed=self.seed,
            max_reseeds=self.adapter.max_reseeds,
            freeze_A=self.adapter.freeze_A,
        )

    def topology_config(self) -> WorkerTopology:
        return WorkerTopology(
            world_size=self.topology.world_size,
            reduce_mode=self.topology.reduce_mode,
            threaded=self.topology.threaded,
        )


def _parse_value(raw: str | None, key: str) -> Any:
    if raw is None:
        raise ConfigError(f"{key}: missing value (expected 'key = value')")
    value = raw.strip()
    if value.lower() == "none":
        return None
    if "," in value:
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


def nest_keys(flat: dict[str, Any]) -> dict[str, Any]:
    """Turn {'a.b': 1} into {'a': {'b': 1}}."""
    nested: dict[str, Any] = {}
    for key, value in flat.items():
        node = nested
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"{key}: '{part}' is both a value and a section")
            node = child
        if isinstance(node.get(parts[-1]), dict):
            raise ConfigError(f"{key}: is a section, not a value")
        node[parts[-1]] = value
    return nested


def format_validation_error(error: ValidationError) -> str:
    lines = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"]) or "config"
        lines.append(f"{location}: {item['msg']}")
    return "; ".join(lines)


def build_run_config(flat: dict[str, Any]) -> RunConfig:
    """Validate a flat key-path mapping into a RunConfig.

    Raises:
        ConfigError: With one `field.path: message` entry per problem.
    """
    try:
        return RunConfig.model_validate(nest_keys(flat))
    except ValidationError as e:
        raise ConfigError(format_validation_error(e)) from e


def load_run_config(path: Path, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Read a run-config file and apply key-path overrides."""
    if not Path(path).is_file():
        raise ConfigError(f"config file not found: {path}")
    raw = dotenv_values(path, interpolate=False)
    flat = {key: _parse_value(value, key) for key, value in raw.items()}
    for key, value in (overrides or {}).items():
        if value is not None:
            flat[key] = value
    return build_run_config(flat)


def bundled_config(name: str) -> Path:
    """Path of a config shipped in gora_desk/configs (teacher, hetero, clusters)."""
    path = Path(__file__).resolve().parent.parent / "configs" / f"{name}.conf"
    if not path.is_file():
        raise ConfigError(f"no bundled config named {name!r}")
    return path
