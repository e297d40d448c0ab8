# config/settings.py
from pathlib import Path
from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-wide settings"""

    # Base Directories
    BASE_DIR: Path = Path(__file__).parent.parent

    # Application
    APP_NAME: str = "lordba"
    APP_VERSION: str = "1.0.0"

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FILE: Optional[Path] = Field(
        default=None, description="Enables a rotating file sink when set"
    )

    # Worker pool used by the U-step solves, the kernel and the Monte-Carlo trials
    LORDBA_THREADS: int = Field(default=1, ge=1)

    # Numerics
    SVD_MAX_SWEEPS: int = Field(default=60, ge=1)
    DEFAULT_SEED: int = 0

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )


# Singleton pattern - only load once
_settings_instance: Optional[Settings] = None


def get_settings() -> Settings:
    global _settings_instance
    if _settings_instance is None:
        _settings_instance = Settings()
        if _settings_instance.LOG_FILE is not None:
            _settings_instance.LOG_FILE.parent.mkdir(parents=True, exist_ok=True)
    return _settings_instance


settings = get_settings()
