"""
Configuration management for segsemi

Two layers:
- ``Settings``: runtime environment (logging, precision, worker cap), read from
  ``SEGSEMI_*`` environment variables or a ``.env`` file.
- ``Hyperparams``: model and schedule constants of one training run, read from a
  JSON or TOML key-value file and overridden by CLI flags.
"""

import json
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Optional

import psutil
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigError


def _default_threads() -> int:
    """Physical core count, falling back to logical cores"""
    return max(1, psutil.cpu_count(logical=False) or psutil.cpu_count() or 1)


class Settings(BaseSettings):
    """Main runtime settings"""

    model_config = SettingsConfigDict(
        env_prefix="SEGSEMI_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    app_version: str = "1.0.0"

    environment: str = "development"

    # Logging Configuration
    log_level: str = "INFO"
    log_format: str = "text"  # json or text
    log_file: Optional[str] = None

    # Compute
    threads: int = Field(default_factory=_default_threads, ge=1)
    precision: int = 32

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        """Log level validation"""
        valid_levels = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        if v.upper() not in valid_levels:
            raise ValueError(f"Log level must be one of: {valid_levels}")
        return v.upper()

    @field_validator("log_format")
    @classmethod
    def validate_log_format(cls, v: str) -> str:
        """Log format validation"""
        valid_formats = ["json", "text"]
        if v.lower() not in valid_formats:
            raise ValueError(f"Log format must be one of: {valid_formats}")
        return v.lower()

    @field_validator("environment")
    @classmethod
    def validate_environment(cls, v: str) -> str:
        """Environment validation"""
        valid_environments = ["development", "production", "testing"]
        if v.lower() not in valid_environments:
            raise ValueError(f"Environment must be one of: {valid_environments}")
        return v.lower()

    @field_validator("precision")
    @classmethod
    def validate_precision(cls, v: int) -> int:
        if v not in (32, 64):
            raise ValueError("Precision must be 32 or 64")
        return v


class DevelopmentSettings(Settings):
    """Development settings"""
    environment: str = "development"
    log_level: str = "DEBUG"


class ProductionSettings(Settings):
    """Batch runs on shared machines"""
    environment: str = "production"
    log_level: str = "INFO"
    log_format: str = "json"


class TestingSettings(Settings):
    """Testing settings: 64-bit tensors for gradient checks, single worker"""
    environment: str = "testing"
    log_level: str = "WARNING"
    precision: int = 64
    threads: int = 1


@lru_cache()
def get_settings() -> Settings:
    """
    Get runtime settings with caching
    Selects the settings class from the SEGSEMI_ENVIRONMENT variable
    """
    environment = os.getenv("SEGSEMI_ENVIRONMENT", "development").lower()

    settings_map = {
        "development": DevelopmentSettings,
        "production": ProductionSettings,
        "testing": TestingSettings,
    }

    settings_class = settings_map.get(environment, DevelopmentSettings)
    try:
        return settings_class()
    except ValidationError as e:
        raise ConfigError("Invalid runtime settings", errors=e.errors(include_url=False)) from e


def reload_settings() -> Settings:
    """Reload settings (useful for tests)"""
    get_settings.cache_clear()
    return get_settings()


class Hyperparams(BaseModel):
    """
    Every constant of a training run.

    The loss weights and schedule follow the published defaults; architecture
    sizes default to the MS-TCN++ configuration.
    """

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    # Loss weights
    alpha: float = Field(default=0.3, ge=0.0, le=1.0)
    beta_smooth: float = Field(default=0.15, ge=0.0)
    beta_distill: float = Field(default=0.15, ge=0.0)
    tau: float = Field(default=4.0, gt=0.0)

    # Multi-stream backbone
    streams: int = Field(default=4, ge=1)
    generation_layers: int = Field(default=11, ge=1)
    refinement_stages: int = Field(default=3, ge=0)
    refinement_layers: int = Field(default=10, ge=1)
    channels: int = Field(default=64, ge=1)

    # Transcript generation
    beam_width: int = Field(default=5, ge=1)
    pool_k: int = Field(default=32, ge=1)
    encoder_hidden: int = Field(default=64, ge=1)
    decoder_hidden: int = Field(default=64, ge=1)
    attention_hidden: int = Field(default=64, ge=1)
    embedding_dim: int = Field(default=16, ge=1)
    max_decode_length: int = Field(default=20, ge=1)

    # Optimisation and schedule
    lr: float = Field(default=0.0005, gt=0.0)
    adam_beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(default=1e-8, gt=0.0)
    batch_size: int = Field(default=3, ge=1)
    total_steps: int = Field(default=12000, ge=1)
    warmup_steps: int = Field(default=2000, ge=0)
    pseudo_refresh_interval: int = Field(default=1, ge=1)
    eval_interval: int = Field(default=500, ge=1)
    checkpoint_interval: int = Field(default=2000, ge=1)
    seed: int = 0

    # Ablation switches
    use_distillation: bool = True
    use_collection: bool = True
    use_heuristics: bool = False

    @model_validator(mode="after")
    def validate_schedule(self) -> "Hyperparams":
        if self.warmup_steps >= self.total_steps:
            raise ValueError("warmup_steps must be smaller than total_steps")
        return self

    @classmethod
    def from_file(cls, path: Path, overrides: Optional[Dict[str, Any]] = None) -> "Hyperparams":
        """Load a JSON or TOML key-value file, then apply overrides"""
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"Cannot read config file: {path}", path=str(path)) from e

        try:
            if path.suffix.lower() == ".toml":
                values = tomllib.loads(text)
            else:
                values = json.loads(text)
        except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
            raise ConfigError(f"Malformed config file: {path}: {e}", path=str(path)) from e

        if not isinstance(values, dict):
            raise ConfigError("Config file must hold a key-value table", path=str(path))
        return cls.build(values, overrides)

    @classmethod
    def build(cls, values: Optional[Dict[str, Any]] = None, overrides: Optional[Dict[str, Any]] = None) -> "Hyperparams":
        merged = dict(values or {})
        merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
        try:
            return cls(**merged)
        except ValidationError as e:
            raise ConfigError("Invalid hyperparameters", errors=_error_list(e)) from e

    def with_overrides(self, **overrides: Any) -> "Hyperparams":
        return self.build(self.model_dump(), overrides)

    @classmethod
    def documented_keys(cls) -> List[str]:
        return list(cls.model_fields)


def _error_list(e: ValidationError) -> List[Dict[str, Any]]:
    return [{"loc": ".".join(str(p) for p in err["loc"]), "msg": err["msg"]} for err in e.errors()]
