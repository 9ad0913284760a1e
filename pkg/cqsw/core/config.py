from functools import lru_cache

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
        populate_by_name=True,
    )

    max_dense_dim: int = Field(default=8192, ge=1, alias="CQSW_MAX_DENSE_DIM")
    max_enumeration: int = Field(default=2**24, ge=1, alias="CQSW_MAX_ENUMERATION")
    max_exact_sequences: int = Field(default=65536, ge=1, alias="CQSW_MAX_EXACT_SEQUENCES")

    eta: float = Field(default=1e-3, gt=0.0, lt=1.0, alias="CQSW_ETA")
    workers: int = Field(default=1, ge=1, le=256, alias="CQSW_WORKERS")
    trial_block: int = Field(default=4096, ge=1, alias="CQSW_TRIAL_BLOCK")
    cache_bytes: int = Field(default=2**29, ge=0, alias="CQSW_CACHE_BYTES")

    log_level: str = Field(default="WARNING", alias="CQSW_LOG_LEVEL")


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return Settings()
