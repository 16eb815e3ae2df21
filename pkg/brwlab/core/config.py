"""
Application configuration management using Pydantic Settings.

Environment-facing settings (output directory, logging, worker pool, metrics)
are loaded from the environment. Numerical defaults live in a plain model so
that nothing read from the environment can change a computed result.
"""
from contextlib import contextmanager
from functools import lru_cache
from typing import Any, Dict, Iterator

from pydantic import BaseModel, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
        env_parse_none_str="null",
    )

    # Application Settings
    app_name: str = Field(default="brwlab", alias="APP_NAME")
    app_version: str = Field(default="0.1.0", alias="APP_VERSION")
    log_level: str = Field(default="INFO", alias="LOG_LEVEL")

    # Output
    output_dir: str = Field(
        default="brwlab-out",
        alias="BRWLAB_OUTPUT_DIR",
        description="Default directory for experiment outputs",
    )

    # Replication worker pool
    worker_pool_size: int = Field(
        default=4,
        alias="BRWLAB_WORKERS",
        description="Threads used to run independent replications",
    )

    # Monitoring
    enable_metrics: bool = Field(default=True, alias="ENABLE_METRICS")

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v):
        """Validate log level."""
        valid_levels = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        v = v.upper()
        if v not in valid_levels:
            raise ValueError(f"Log level must be one of {valid_levels}")
        return v

    @model_validator(mode="after")
    def validate_settings(self):
        """Validate settings after all fields are loaded."""
        if self.worker_pool_size <= 0:
            raise ValueError(
                f"worker_pool_size must be positive, got: {self.worker_pool_size}"
            )
        if not self.output_dir.strip():
            raise ValueError("output_dir must not be empty")
        return self


class NumericsDefaults(BaseModel):
    """Numerical knobs shared by the spectral, simulation and topology services.

    Experiment configs may override any of these; the environment never does.
    """

    support_cap: int = Field(
        default=2_000_000,
        description="Maximum support size of a sparse vertex-space distribution",
    )
    population_cap: int = Field(
        default=5_000_000,
        description="Maximum total BRW population before a run is truncated",
    )
    row_cap: int = Field(
        default=1 << 20,
        description="Largest neighbourhood materialised as an explicit transition row",
    )
    row_cache_size: int = Field(default=65_536, description="Kernel row LRU capacity")
    tail_tolerance: float = Field(default=1e-6)
    fit_r_squared: float = Field(default=0.99)
    exponent_margin: float = Field(
        default=0.15,
        description="Margin around the critical exponent used by convergence verdicts",
    )
    critical_tolerance: float = Field(default=1e-9)
    min_positive_terms: int = Field(default=200)
    power_iterations: int = Field(default=200_000)
    power_tolerance: float = Field(default=1e-11)
    row_sum_tolerance: float = Field(default=1e-12)
    gw_extension_cap: int = Field(
        default=64,
        description="Embedded GW generation size beyond which a replication stops being extended",
    )

    @model_validator(mode="after")
    def validate_defaults(self):
        """Reject non-positive caps and budgets."""
        for name in (
            "support_cap",
            "population_cap",
            "row_cap",
            "row_cache_size",
            "min_positive_terms",
            "power_iterations",
            "gw_extension_cap",
        ):
            value = getattr(self, name)
            if value <= 0:
                raise ValueError(f"{name} must be positive, got: {value}")
        if not 0.0 < self.fit_r_squared <= 1.0:
            raise ValueError(
                f"fit_r_squared must lie in (0, 1], got: {self.fit_r_squared}"
            )
        return self


@lru_cache()
def get_settings() -> Settings:
    """
    Get cached settings instance.

    Using lru_cache ensures settings are loaded only once.
    """
    return Settings()


# Export settings instance
settings = get_settings()

numerics = NumericsDefaults()


@contextmanager
def numerics_overrides(values: Dict[str, Any]) -> Iterator[NumericsDefaults]:
    """
    Temporarily replace numerics defaults in place.

    Args:
        values: Field name -> new value

    Raises:
        ValueError: unknown field or a value the defaults model rejects
    """
    unknown = set(values) - set(NumericsDefaults.model_fields)
    if unknown:
        raise ValueError(f"unknown numerics fields: {sorted(unknown)}")
    checked = NumericsDefaults(**{**numerics.model_dump(), **values})
    saved = numerics.model_dump()
    for name in values:
        setattr(numerics, name, getattr(checked, name))
    try:
        yield numerics
    finally:
        for name, value in saved.items():
            setattr(numerics, name, value)
