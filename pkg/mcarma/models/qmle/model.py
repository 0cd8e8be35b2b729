from typing import Any, Optional
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from mcarma.utils.linalg import frozen

class FitOptions(BaseModel):
    """
    推定オプション（JSON設定の "fit" セクション）
    """
    model_config = ConfigDict(frozen=True)

    n_starts: int = Field(default=8, ge=1)
    max_evals: int = Field(default=50_000, ge=10)
    tol_obj: float = Field(default=1e-8, gt=0)
    tol_simplex: float = Field(default=1e-8, gt=0)
    hac_lag_override: Optional[int] = Field(default=None, ge=0)
    fd_step_scale: float = Field(default=1.0, gt=0)
    seed: int = Field(default=0, ge=0)
    warm_start: Optional[list[float]] = None
    compute_covariance: bool = True


class StartResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    initial: np.ndarray
    terminal: np.ndarray
    objective: float
    n_evals: int
    converged: bool

    @field_validator("initial", "terminal", mode="before")
    @classmethod
    def _as_array(cls, v):
        return frozen(v, ndim=1)


class FitResult(BaseModel):
    """
    QMLEの結果。H_hat / I_hat / sandwich は計算に失敗した場合 None（理由は diagnostics）
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    space_name: str
    n_obs: int
    n_params: int
    theta_hat: np.ndarray
    objective: float
    H_hat: Optional[np.ndarray] = None
    I_hat: Optional[np.ndarray] = None
    sandwich: Optional[np.ndarray] = None
    converged: bool
    n_evals: int
    starts_used: int
    start_objectives: list[float]
    diagnostics: dict[str, Any] = Field(default_factory=dict)

    @field_validator("theta_hat", mode="before")
    @classmethod
    def _as_vector(cls, v):
        return frozen(v, ndim=1)

    @field_validator("H_hat", "I_hat", "sandwich", mode="before")
    @classmethod
    def _as_matrix(cls, v):
        return None if v is None else frozen(v, ndim=2)

    @property
    def standard_errors(self) -> Optional[np.ndarray]:
        if self.sandwich is None:
            return None
        return np.sqrt(np.clip(np.diag(self.sandwich), 0.0, None) / self.n_obs)

    def to_dict(self) -> dict:
        def _list(a):
            return None if a is None else a.tolist()
        se = self.standard_errors
        return {
            "space": self.space_name,
            "n_obs": self.n_obs,
            "n_params": self.n_params,
            "theta_hat": self.theta_hat.tolist(),
            "objective": self.objective,
            "H_hat": _list(self.H_hat),
            "I_hat": _list(self.I_hat),
            "sandwich": _list(self.sandwich),
            "standard_errors": _list(se),
            "converged": self.converged,
            "n_evals": self.n_evals,
            "starts_used": self.starts_used,
            "start_objectives": list(self.start_objectives),
            "diagnostics": self.diagnostics,
        }
