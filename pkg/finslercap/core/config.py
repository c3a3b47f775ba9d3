"""Process configuration using Pydantic settings."""

from __future__ import annotations

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-wide settings loaded from environment variables and `.env`.

    Scenario-specific values (norms, bodies, solver, thresholds) live in the
    scenario file, see `finslercap.config.scenario`.
    """

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="FINSLERCAP_",
        case_sensitive=False,
        extra="ignore",
    )

    APP_NAME: str = "finslercap"
    APP_VERSION: str = "0.1.0"

    # Logging configuration
    LOG_LEVEL: str = "INFO"
    LOG_JSON: bool = False
    LOG_INCLUDE_CALLER: bool = False

    # Execution
    THREADS: int = 1
    DETERMINISTIC: bool = False

    # Voxel grids (nodes per axis)
    DEFAULT_GRID: int = 96
    SMOKE_GRID: int = 48

    # Sphere quadrature for N = 3
    SPHERE_N_POL: int = 64
    SPHERE_N_AZ: int = 128

    # Near-body refinement patch of the exterior solve (nodes per axis)
    PATCH_MAX_GRID: int = 192

    # Optimizer
    MAX_ITERS: int = 5000

    # Solve cache (least recently used entries are evicted beyond this)
    CACHE_MAX_ENTRIES: int = 8


settings = Settings()
