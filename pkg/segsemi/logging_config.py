"""
Structured logging system for segsemi
"""

import json
import logging
import sys
import time
import uuid
from contextvars import ContextVar
from datetime import datetime, timezone
from functools import wraps
from typing import Any, Callable, Dict, Mapping, Optional, TypeVar

from .config import Settings, get_settings

F = TypeVar("F", bound=Callable[..., Any])

# Context variables for tracking the active run and optimisation step
run_id_var: ContextVar[Optional[str]] = ContextVar("run_id", default=None)
step_var: ContextVar[Optional[int]] = ContextVar("step", default=None)


class JSONFormatter(logging.Formatter):
    """Formatter for structured JSON logs"""

    def format(self, record: logging.LogRecord) -> str:
        """Format log record to JSON"""
        settings = get_settings()

        log_entry: Dict[str, Any] = {
            "timestamp": datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
            "level": record.levelname,
            "service": "segsemi",
            "version": settings.app_version,
            "environment": settings.environment,
            "logger": record.name,
            "message": record.getMessage(),
        }

        run_id = run_id_var.get()
        if run_id:
            log_entry["run_id"] = run_id

        step = step_var.get()
        if step is not None:
            log_entry["step"] = step

        if record.pathname:
            log_entry["module"] = record.module
            log_entry["function"] = record.funcName
            log_entry["line"] = record.lineno

        if hasattr(record, "extra_fields"):
            log_entry.update(record.extra_fields)

        if record.exc_info:
            log_entry["exception"] = {
                "type": record.exc_info[0].__name__ if record.exc_info[0] else None,
                "message": str(record.exc_info[1]) if record.exc_info[1] else None,
                "traceback": self.formatException(record.exc_info),
            }

        if hasattr(record, "duration_ms"):
            log_entry["duration_ms"] = record.duration_ms

        return json.dumps(log_entry, ensure_ascii=False, default=str)


class TextFormatter(logging.Formatter):
    """Simple text formatter for interactive runs"""

    def format(self, record: logging.LogRecord) -> str:
        """Format log record in text format"""
        timestamp = datetime.now(timezone.utc).strftime("%Y-%m-%d %H:%M:%S")

        message = f"[{timestamp}] {record.levelname:8} | {record.name:24} | {record.getMessage()}"

        run_id = run_id_var.get()
        if run_id:
            message += f" | run={run_id[:8]}"

        step = step_var.get()
        if step is not None:
            message += f" | step={step}"

        if hasattr(record, "duration_ms"):
            message += f" | {record.duration_ms}ms"

        return message


def setup_logging(settings: Optional[Settings] = None) -> logging.Logger:
    """Logging system setup"""
    settings = settings or get_settings()
    log_level = getattr(logging, settings.log_level.upper())

    root_logger = logging.getLogger()
    root_logger.setLevel(log_level)

    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    # stderr keeps stdout free for command summaries
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(log_level)
    console_handler.setFormatter(JSONFormatter() if settings.log_format == "json" else TextFormatter())
    root_logger.addHandler(console_handler)

    if settings.log_file:
        file_handler = logging.FileHandler(settings.log_file, encoding="utf-8")
        file_handler.setLevel(log_level)
        file_handler.setFormatter(JSONFormatter())  # Files always in JSON
        root_logger.addHandler(file_handler)

    app_logger = logging.getLogger("segsemi")
    app_logger.debug("Logging system initialized", extra={
        "extra_fields": {
            "log_level": settings.log_level,
            "log_format": settings.log_format,
            "environment": settings.environment,
        }
    })
    return app_logger


def get_logger(name: str = "segsemi") -> logging.Logger:
    """Get logger with specified name"""
    return logging.getLogger(name)


def set_run_context(run_id: Optional[str] = None, step: Optional[int] = None) -> str:
    """Bind run id (generated when absent) and step for log records"""
    run_id = run_id or uuid.uuid4().hex
    run_id_var.set(run_id)
    step_var.set(step)
    return run_id


def set_step(step: int) -> None:
    step_var.set(step)


def clear_run_context() -> None:
    """Clear run context"""
    run_id_var.set(None)
    step_var.set(None)


def log_performance(func: F) -> F:
    """Decorator for logging function duration"""

    @wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        logger = get_logger(f"segsemi.performance.{func.__module__.rsplit('.', 1)[-1]}")
        start_time = time.perf_counter()

        try:
            result = func(*args, **kwargs)
        except Exception as e:
            duration = (time.perf_counter() - start_time) * 1000
            logger.error(f"Function {func.__name__} failed", extra={
                "extra_fields": {
                    "function": func.__name__,
                    "duration_ms": round(duration, 2),
                    "status": "error",
                    "error_type": type(e).__name__,
                    "error_message": str(e),
                }
            })
            raise

        duration = (time.perf_counter() - start_time) * 1000
        logger.info(f"Function {func.__name__} completed", extra={
            "extra_fields": {
                "function": func.__name__,
                "duration_ms": round(duration, 2),
                "status": "success",
            }
        })
        return result

    return wrapper  # type: ignore[return-value]


class LoggerMixin:
    """Mixin for adding logging to classes"""

    @property
    def logger(self) -> logging.Logger:
        """Get logger for class"""
        return get_logger(f"segsemi.{self.__class__.__name__}")


def log_training_step(step: int, terms: Mapping[str, float], duration_ms: float,
                      skipped_videos: int = 0) -> None:
    """Log one optimisation step"""
    logger = get_logger("segsemi.trainer")

    extra_fields: Dict[str, Any] = {
        "event_type": "train_step",
        "step": step,
        "duration_ms": round(duration_ms, 2),
        **{k: round(float(v), 6) for k, v in terms.items()},
    }
    if skipped_videos:
        extra_fields["skipped_videos"] = skipped_videos

    logger.debug(f"Step {step} total={terms.get('total', 0.0):.4f}", extra={"extra_fields": extra_fields})


def log_pseudo_label(video_id: str, n_candidates: int, cost: Optional[float] = None,
                     transcript_len: Optional[int] = None, error: Optional[str] = None) -> None:
    """Log the outcome of pseudo-labelling one unannotated video"""
    logger = get_logger("segsemi.matcher")

    extra_fields: Dict[str, Any] = {
        "event_type": "pseudo_label",
        "video_id": video_id,
        "candidates": n_candidates,
    }
    if cost is not None:
        extra_fields["alignment_cost"] = round(cost, 6)
    if transcript_len is not None:
        extra_fields["transcript_len"] = transcript_len

    if error:
        extra_fields["error"] = error
        logger.warning(f"No pseudo labels for video {video_id}", extra={"extra_fields": extra_fields})
    else:
        logger.debug(f"Pseudo labels for video {video_id}", extra={"extra_fields": extra_fields})


def log_evaluation(mode: str, scores: Mapping[str, float], videos: int) -> None:
    """Log an evaluation report"""
    logger = get_logger("segsemi.evaluation")
    logger.info(f"Evaluation ({mode}) MoF={scores.get('mof', 0.0):.2f}", extra={
        "extra_fields": {
            "event_type": "evaluation",
            "mode": mode,
            "videos": videos,
            **{k: round(float(v), 4) for k, v in scores.items()},
        }
    })
