"""Environment configuration using Pydantic Settings"""

from functools import lru_cache
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    # Application settings
    app_name: str = "EHOI Detection Toolkit"
    app_version: str = "0.1.0"
    debug: bool = False

    # Output settings
    output_dir: str = "./outputs"
    report_schema_version: int = 1

    # Evaluation settings
    iou_threshold: float = 0.5
    interpolation: str = "coco101"  # coco101 | allpoints
    contact_threshold: float = 0.5

    # Augmentation settings
    seed: int = 42
    kernel_size: int = 15
    trajectory_points: int = 4
    mask_threshold: float = 0.5

    # Frame-level parallelism
    jobs: int = 1

    # Logging settings
    log_level: str = "INFO"
    log_format: str = "<level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>"
    log_file: Optional[str] = None

    model_config = SettingsConfigDict(
        env_prefix="EHOI_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )


@lru_cache()
def get_settings():
    """Get cached settings instance"""
    return Settings()
