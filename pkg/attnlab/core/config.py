"""
Application configuration settings
"""

from pathlib import Path

from pydantic_settings import BaseSettings, SettingsConfigDict

PACKAGE_DIR = Path(__file__).resolve().parent.parent


class Settings(BaseSettings):
    """Application settings"""

    model_config = SettingsConfigDict(
        env_prefix="ATTNLAB_",
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
    )

    PROJECT_NAME: str = "attnlab"

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_DIR: str = "./logs"

    # Artifacts (checkpoints, reports, cost tables)
    ARTIFACTS_DIR: str = "./artifacts"

    # Bundled data files
    SHADOW_TEXT_PATH: str = str(PACKAGE_DIR / "data" / "shadow_text.txt")
    PRESETS_PATH: str = str(PACKAGE_DIR / "ml" / "presets.yaml")
    COST_FORMULAS_PATH: str = str(PACKAGE_DIR / "ml" / "cost_formulas.yaml")

    # Numerics
    EPS_DEN: float = 1e-8
    RELATIVE_ERROR_FLOOR: float = 1e-300

    # Models above this many parameters are config-only
    MAX_BUILD_PARAMS: int = 600_000_000

    # Evaluation defaults
    VAL_FRACTION: float = 0.1
    EVAL_BATCHES: int = 8


settings = Settings()
