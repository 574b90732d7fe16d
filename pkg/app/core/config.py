"""
Runtime settings
환경변수(PPW_*)와 .env 파일에서 읽는 전역 설정
"""

import os
from functools import lru_cache

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


def _default_threads() -> int:
    return max(1, min(8, os.cpu_count() or 1))


class Settings(BaseSettings):
    """툴킷 전역 설정 (PPW_ prefix)"""

    model_config = SettingsConfigDict(
        env_prefix="PPW_",
        env_file=".env",
        extra="ignore",
    )

    # ========== Concurrency ==========
    threads: int = Field(default_factory=_default_threads, ge=1)

    # ========== Sturm-Liouville / spectrum ==========
    mesh_size: int = Field(default=4000, ge=16)
    quad_order: int = Field(default=64, ge=1)
    quad_panels: int = Field(default=16, ge=1)
    merge_rtol: float = Field(default=1e-6, gt=0)
    extrapolate: bool = True
    radial_degree: int = Field(default=40, ge=8)

    # ========== Product grids ==========
    grid_theta_points: int = Field(default=64, ge=8)
    grid_fibre_degree: int = Field(default=17, ge=3)
    energy_theta_points: int = Field(default=96, ge=8)
    energy_fibre_degree: int = Field(default=47, ge=3)

    # ========== Solvers ==========
    balance_tol: float = Field(default=1e-8, gt=0)
    pipeline_balance_tol: float = Field(default=1e-13, gt=0)
    zero_tol: float = Field(default=1e-7, gt=0)
    zero_seeds: int = Field(default=8, ge=1)
    seed_batch: int = Field(default=4, ge=1)
    seed: int = 20240917

    # ========== Service ==========
    log_level: str = "INFO"
    api_max_batch: int = Field(default=50, ge=1)


@lru_cache
def get_settings() -> Settings:
    return Settings()
