from typing import Optional
import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator
from mcarma.models.model_core import StabilityReport
from mcarma.utils.linalg import frozen

_ARRAYS = ConfigDict(arbitrary_types_allowed=True, frozen=True)

class DiscretizedModel(BaseModel):
    """
    グリッド h で離散化した定常カルマンフィルタの行列一式
    """
    model_config = _ARRAYS

    h: float
    Phi: np.ndarray
    sigma_h: np.ndarray
    C: np.ndarray
    omega: np.ndarray
    K: np.ndarray
    V: np.ndarray
    residual: float
    iterations: int

    @field_validator("Phi", "sigma_h", "C", "omega", "K", "V", mode="before")
    @classmethod
    def _as_array(cls, v):
        return frozen(v, ndim=2)

    @property
    def N(self) -> int:
        return self.Phi.shape[0]

    @property
    def d(self) -> int:
        return self.C.shape[0]

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "Phi": self.Phi.tolist(),
            "sigma_h": self.sigma_h.tolist(),
            "omega": self.omega.tolist(),
            "K": self.K.tolist(),
            "V": self.V.tolist(),
            "residual": self.residual,
            "iterations": self.iterations,
        }


class LikelihoodValue(BaseModel):
    """
    value = mean(per_step)、per_step_k = d log 2π + log det V + ε̂_k^T V^{-1} ε̂_k
    """
    model_config = _ARRAYS

    value: float
    innovations: np.ndarray
    per_step: np.ndarray

    @field_validator("innovations", "per_step", mode="before")
    @classmethod
    def _as_array(cls, v):
        return frozen(v)


class ObjectiveEvaluation(BaseModel):
    """
    最適化から見た L̂(θ) の評価結果。実行不能な θ は penalty 値と理由を持つ
    """
    model_config = _ARRAYS

    value: float
    feasible: bool
    reason: Optional[str] = None
    likelihood: Optional[LikelihoodValue] = None
    stability: Optional[StabilityReport] = None
