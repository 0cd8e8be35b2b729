from enum import Enum
from typing import Optional
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from mcarma.core.exceptions import AppException, ErrorCode
from mcarma.utils.linalg import frozen, min_eigenvalue

_ARRAYS = ConfigDict(arbitrary_types_allowed=True, frozen=True)

class DriverKind(str, Enum):
    BROWNIAN = "brownian"
    NIG = "nig"

class DriverSpec(BaseModel):
    """
    駆動レヴィ過程の指定。Brownian は sigma、NIG は (mu, alpha, beta, delta, Delta) を使う
    """
    model_config = ConfigDict(frozen=True)

    kind: DriverKind
    sigma: Optional[list[list[float]]] = None
    mu: Optional[list[float]] = None
    alpha: Optional[float] = Field(default=None, ge=0)
    beta: Optional[list[float]] = None
    delta: Optional[float] = Field(default=None, ge=0)
    Delta: Optional[list[list[float]]] = None

    @model_validator(mode="after")
    def _check(self):
        if self.kind == DriverKind.BROWNIAN:
            if self.sigma is None:
                raise AppException(error_code=ErrorCode.INVALID_PARAMETER, message="Brownian driver requires sigma")
            S = np.asarray(self.sigma, dtype=float)
            if S.ndim != 2 or S.shape[0] != S.shape[1]:
                raise AppException(error_code=ErrorCode.INVALID_PARAMETER, message="sigma must be a square matrix")
            if np.max(np.abs(S - S.T)) > 1e-12 or min_eigenvalue(S) <= 0.0:
                raise AppException(error_code=ErrorCode.INVALID_PARAMETER, message="sigma must be symmetric positive definite")
            return self

        if any(v is None for v in (self.mu, self.alpha, self.beta, self.delta, self.Delta)):
            raise AppException(
                error_code=ErrorCode.INVALID_PARAMETER,
                message="NIG driver requires mu, alpha, beta, delta and Delta",
            )
        D = np.asarray(self.Delta, dtype=float)
        s = len(self.mu)
        if D.shape != (s, s) or len(self.beta) != s:
            raise AppException(error_code=ErrorCode.DIMENSION_MISMATCH, message="NIG parameter dimensions do not match")
        if np.max(np.abs(D - D.T)) > 1e-12 or min_eigenvalue(D) <= 0.0:
            raise AppException(error_code=ErrorCode.INVALID_PARAMETER, message="Delta must be symmetric positive definite")
        if abs(np.linalg.det(D) - 1.0) > 1e-10:
            raise AppException(error_code=ErrorCode.INVALID_PARAMETER, message="det(Delta) must equal 1")
        if self.kappa_squared <= 0.0:
            raise AppException(
                error_code=ErrorCode.INVALID_PARAMETER,
                message="kappa^2 = alpha^2 - <beta, Delta beta> must be positive",
                context={"kappa_squared": self.kappa_squared}
            )
        return self

    @property
    def dim(self) -> int:
        return len(self.sigma) if self.kind == DriverKind.BROWNIAN else len(self.mu)

    @property
    def kappa_squared(self) -> float:
        b = np.asarray(self.beta, dtype=float)
        return float(self.alpha ** 2 - b @ np.asarray(self.Delta, dtype=float) @ b)

    @classmethod
    def brownian(cls, sigma) -> "DriverSpec":
        return cls(kind=DriverKind.BROWNIAN, sigma=np.asarray(sigma, dtype=float).tolist())

    @classmethod
    def study_nig(cls) -> "DriverSpec":
        # シミュレーション研究の NIG パラメータ（平均ゼロになるよう mu を選んである）
        return cls(
            kind=DriverKind.NIG,
            mu=(-np.array([3.0, 2.0]) / (2.0 * np.sqrt(31.0))).tolist(),
            alpha=3.0,
            beta=[1.0, 1.0],
            delta=1.0,
            Delta=[[1.25, -0.5], [-0.5, 1.0]],
        )


class DriverMoments(BaseModel):
    model_config = _ARRAYS

    mean: np.ndarray
    cov: np.ndarray

    @field_validator("mean", "cov", mode="before")
    @classmethod
    def _as_array(cls, v):
        return frozen(v)


class Sample(BaseModel):
    """
    等間隔観測 Y(h), ..., Y(nh)。values の k 行目が Y((k+1)h)
    """
    model_config = _ARRAYS

    h: float = Field(gt=0)
    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _as_array(cls, v):
        arr = np.array(v, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        return frozen(arr, ndim=2)

    @model_validator(mode="after")
    def _check(self):
        if self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise AppException(error_code=ErrorCode.INVALID_INPUT, message="Sample must contain at least one observation")
        bad = np.flatnonzero(~np.all(np.isfinite(self.values), axis=1))
        if bad.size:
            raise AppException(
                error_code=ErrorCode.MALFORMED_DATA,
                message=f"Non-finite observation in row {int(bad[0]) + 1}",
                context={"row": int(bad[0]) + 1}
            )
        return self

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.h * np.arange(1, self.n + 1)


class SimulatedPath(BaseModel):
    """
    オイラー・丸山法の刻み幅 step での状態 X の経路（states[0] = X(0)）
    """
    model_config = _ARRAYS

    step: float = Field(gt=0)
    states: np.ndarray

    @field_validator("states", mode="before")
    @classmethod
    def _as_array(cls, v):
        return frozen(v, ndim=2)

    @property
    def horizon(self) -> float:
        return self.step * (self.states.shape[0] - 1)
