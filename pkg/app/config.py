import logging
import sys
from typing import Optional

import structlog
from pydantic import SecretStr, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    configuration for the besfs integrity monitor
    using pydantic for validation and env var loading
    """
    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8")

    # sealing key, 64 hex chars; unset means a per-seed key is derived
    SEALING_KEY: Optional[SecretStr] = None

    # storage
    STORE_ROOT: str = "./besfs-store"
    PAGE_POOL_CAPACITY: int = 4096
    MMAP_BASE: int = 0x10000

    # monitor behaviour
    STRICT_ABORT: bool = False
    CHECK_GOOD_STATE: bool = False

    # generator / campaign defaults
    DEFAULT_SEED: int = 0
    CORPUS_SCRIPTS: int = 200
    CORPUS_LENGTH: int = 50
    INVALID_FRACTION: float = 0.1

    # http surface
    RATE_LIMIT: str = "30/minute"
    MAX_SCRIPT_LENGTH: int = 100000

    LOG_LEVEL: str = "INFO"
    ENVIRONMENT: str = "development"

    @field_validator("SEALING_KEY")
    @classmethod
    def key_is_256_bit_hex(cls, v: Optional[SecretStr]) -> Optional[SecretStr]:
        if v is None:
            return v
        raw = v.get_secret_value()
        if not raw:
            return None
        try:
            ok = len(bytes.fromhex(raw)) == 32
        except ValueError:
            ok = False
        if not ok:
            raise ValueError("SEALING_KEY must be 64 hex characters")
        return v

    @field_validator("PAGE_POOL_CAPACITY")
    @classmethod
    def capacity_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("PAGE_POOL_CAPACITY must be at least 1")
        return v


def configure_logging(level: str = "INFO") -> None:
    """json logs with iso timestamps, filtered at `level`"""
    structlog.configure(
        processors=[
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.add_log_level,
            structlog.processors.JSONRenderer()
        ],
        wrapper_class=structlog.make_filtering_bound_logger(getattr(logging, level.upper(), logging.INFO)),
        # stdout belongs to command output (generated scripts, summaries)
        logger_factory=structlog.PrintLoggerFactory(sys.stderr),
    )


# global settings instance
settings = Settings()
