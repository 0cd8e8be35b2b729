from pydantic_settings import BaseSettings
from pydantic import Field
from functools import lru_cache
from typing import Optional


class Settings(BaseSettings):
    # Project
    PROJECT_NAME: str = Field(default="mcarma")

    # Environment
    ENVIRONMENT: str = Field(default="development")
    LOG_LEVEL: Optional[str] = Field(default=None)

    # ========= 実行環境 =========
    DEFAULT_THREADS: int = Field(default=1, ge=1)
    DEFAULT_OUTPUT_DIR: str = Field(default="out")

    # ========= パラメータ空間 =========
    DEFAULT_BOX_BOUND: float = Field(default=10.0, gt=0)
    CHOLESKY_DIAGONAL_FLOOR: float = Field(default=1e-4, gt=0)

    # ========= 尤度計算 =========
    PENALTY_VALUE: float = Field(default=1e10)
    RICCATI_TOL: float = Field(default=1e-12, gt=0)
    RICCATI_MAX_ITER: int = Field(default=100_000, ge=1)
    RICCATI_REGULARIZATION: float = Field(default=1e-10, ge=0)

    class Config:
        case_sensitive = True # 環境変数の大文字小文字を区別する
        env_file = ".env" # 環境変数のファイル名
        env_prefix = "MCARMA_"

@lru_cache # 関数の結果をキャッシュする
def get_settings():
    return Settings()

settings = get_settings()
