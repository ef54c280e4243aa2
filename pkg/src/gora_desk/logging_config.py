"""Logging configuration for gora-desk.

Every run writes JSON lines to one log file. Stage calls log their arguments
and results through `log_stage`; in summary mode matrices in those payloads
are collapsed to shape/dtype/norm descriptors before they reach a handler.
"""

import json
import logging
import logging.handlers
import os
import sys
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any

from .utils.summarizer import LogSummarizer

DEFAULT_MAX_BYTES = 10 * 1024 * 1024
_SIZE_UNITS = {"GB": 1024**3, "MB": 1024**2, "KB": 1024}


class LoggingMode(Enum):
    """How much of each payload reaches the log."""

    SUMMARY = "summary"  # arrays collapsed to descriptors
    DEBUG = "debug"  # raw payloads, echoed to stdout
    MINIMAL = "minimal"  # warnings and errors only


def parse_size(size_str: str) -> int:
    """Parse a size like '10MB' or '512' into bytes."""
    text = size_str.upper().strip()
    for suffix, factor in _SIZE_UNITS.items():
        if text.endswith(suffix):
            return int(text[: -len(suffix)]) * factor
    return int(text)


@dataclass(frozen=True)
class LogSettings:
    """Resolved logging options; environment variables win over arguments."""

    level: str = "INFO"
    file: Path | None = None
    mode: LoggingMode = LoggingMode.SUMMARY
    console: bool = False
    max_bytes: int = DEFAULT_MAX_BYTES
    backup_count: int = 5
    retention_days: int | None = None

    @classmethod
    def from_env(
        cls,
        log_level: str = "INFO",
        log_file: str | None = None,
        log_mode: str | None = None,
        max_file_size: int | None = None,
        backup_count: int = 5,
        retention_days: int | None = None,
    ) -> "LogSettings":
        try:
            mode = LoggingMode(os.getenv("GORA_LOG_MODE", log_mode or "summary").lower())
        except ValueError:
            mode = LoggingMode.SUMMARY

        retention_env = os.getenv("GORA_LOG_RETENTION_DAYS")
        if retention_env and retention_env.isdigit():
            retention_days = int(retention_env)

        max_bytes = max_file_size or DEFAULT_MAX_BYTES
        size_env = os.getenv("GORA_LOG_MAX_SIZE")
        if size_env:
            try:
                max_bytes = parse_size(size_env)
            except ValueError:
                pass

        file_env = os.getenv("GORA_LOG_FILE", log_file)
        return cls(
            level=os.getenv("GORA_LOG_LEVEL", log_level).upper(),
            file=Path(file_env) if file_env else None,
            mode=mode,
            console=os.getenv("GORA_DEBUG", "false").lower() == "true",
            max_bytes=max_bytes,
            backup_count=backup_count,
            retention_days=retention_days or None,
        )

    def log_path(self) -> Path:
        """Explicit file, else logs/ under GORA_PROJECT_ROOT or the working dir."""
        if self.file is not None:
            return self.file
        root = Path(os.getenv("GORA_PROJECT_ROOT") or Path.cwd())
        # timed rotation adds its own date suffix
        if self.retention_days:
            return root / "logs" / "gora-desk.log"
        return root / "logs" / f"gora-desk-{datetime.now():%Y%m%d}.log"

    def record(self) -> dict[str, Any]:
        data = asdict(self)
        data["file"] = None if self.file is None else str(self.file)
        data["mode"] = self.mode.value
        return data


class ArraySummaryFilter(logging.Filter):
    """Drop or summarize records according to the logging mode."""

    payload_fields = ("arguments", "result")

    def __init__(self, mode: LoggingMode = LoggingMode.SUMMARY):
        super().__init__()
        self.mode = mode
        self.summarizer = LogSummarizer()

    def filter(self, record: logging.LogRecord) -> bool:
        if self.mode is LoggingMode.MINIMAL:
            return record.levelno >= logging.WARNING
        if self.mode is LoggingMode.SUMMARY:
            # summarize_* build new containers; the caller's payload is untouched
            for name in self.payload_fields:
                value = getattr(record, name, None)
                if isinstance(value, dict):
                    setattr(record, name, self.summarizer.summarize_dict(value))
                elif value is not None:
                    setattr(record, name, self.summarizer.summarize_value(value))
        return True


class JSONFormatter(logging.Formatter):
    """One JSON object per record with the run's structured extras."""

    extra_fields = (
        "stage",
        "arguments",
        "result",
        "error",
        "duration_ms",
        "layer",
        "step",
        "loss",
        "lr",
        "gamma",
        "steps_used",
        "retries",
        "worker",
        "host_bytes",
        "settings",
    )

    def format(self, record: logging.LogRecord) -> str:
        created = datetime.fromtimestamp(record.created, tz=timezone.utc)
        log_data: dict[str, Any] = {
            "timestamp": created.isoformat(timespec="milliseconds").replace("+00:00", "Z"),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
            "module": record.module,
            "function": record.funcName,
            "line": record.lineno,
        }
        if record.exc_info:
            log_data["exception"] = self.formatException(record.exc_info)

        for name in self.extra_fields:
            value = getattr(record, name, None)
            if value is not None:
                log_data[name] = value
        return json.dumps(log_data, default=_json_fallback)


def _json_fallback(value: Any) -> Any:
    # debug mode lets raw numpy values through
    if hasattr(value, "tolist"):
        return value.tolist()
    return str(value)


class StderrFilter(logging.Filter):
    """Only ERROR and above reach stderr."""

    def filter(self, record: logging.LogRecord) -> bool:
        return record.levelno >= logging.ERROR


def _file_handler(settings: LogSettings, path: Path) -> logging.Handler:
    if settings.retention_days:
        handler = logging.handlers.TimedRotatingFileHandler(
            path,
            when="midnight",
            backupCount=settings.retention_days,
            encoding="utf-8",
        )
        handler.suffix = ".%Y%m%d"
        return handler
    return logging.handlers.RotatingFileHandler(
        path,
        maxBytes=settings.max_bytes,
        backupCount=settings.backup_count,
        encoding="utf-8",
    )


def setup_logging(
    log_level: str = "INFO",
    log_file: str | None = None,
    log_mode: str | None = None,
    max_file_size: int | None = None,
    backup_count: int = 5,
    retention_days: int | None = None,
) -> Path:
    """Configure the root logger for a gora-desk invocation.

    Arguments are fallbacks; the GORA_LOG_LEVEL, GORA_LOG_FILE, GORA_LOG_MODE,
    GORA_LOG_MAX_SIZE, GORA_LOG_RETENTION_DAYS and GORA_DEBUG environment
    variables take precedence. Handlers from an earlier call are replaced.

    Returns:
        The path of the JSON log file.
    """
    settings = LogSettings.from_env(
        log_level, log_file, log_mode, max_file_size, backup_count, retention_days
    )
    path = settings.log_path()
    path.parent.mkdir(parents=True, exist_ok=True)

    root_logger = logging.getLogger()
    root_logger.setLevel(getattr(logging, settings.level, logging.INFO))
    for handler in list(root_logger.handlers):
        root_logger.removeHandler(handler)
        handler.close()

    summary_filter = ArraySummaryFilter(settings.mode)
    console_formatter = logging.Formatter(
        "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    file_handler = _file_handler(settings, path)
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(JSONFormatter())
    file_handler.addFilter(summary_filter)
    root_logger.addHandler(file_handler)

    stderr_handler = logging.StreamHandler(sys.stderr)
    stderr_handler.setLevel(logging.ERROR)
    stderr_handler.setFormatter(console_formatter)
    stderr_handler.addFilter(StderrFilter())
    stderr_handler.addFilter(summary_filter)
    root_logger.addHandler(stderr_handler)

    if settings.console or settings.mode is LoggingMode.DEBUG:
        stdout_handler = logging.StreamHandler(sys.stdout)
        stdout_handler.setLevel(logging.DEBUG)
        stdout_handler.setFormatter(console_formatter)
        if settings.mode is not LoggingMode.DEBUG:
            stdout_handler.addFilter(summary_filter)
        root_logger.addHandler(stdout_handler)

    logging.getLogger(__name__).info(
        "Logging initialized", extra={"settings": settings.record()}
    )
    return path


def log_stage(
    logger: logging.Logger,
    stage: str,
    arguments: dict[str, Any],
    result: Any | None = None,
    error: Exception | None = None,
    duration_ms: float | None = None,
) -> None:
    """Log one stage invocation (probe, allocate, init, train, verify, report).

    Failures go out at ERROR with the traceback; successes at INFO with the
    stage's summary as `result`.
    """
    extra: dict[str, Any] = {
        "stage": stage,
        "arguments": arguments,
        "duration_ms": duration_ms,
    }
    if error is not None:
        extra["error"] = str(error)
        logger.error(f"{stage} failed: {error}", extra=extra, exc_info=True)
    else:
        extra["result"] = result
        logger.info(f"{stage} finished", extra=extra)
