from enum import Enum
from typing import Any, Callable, Literal, Optional
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from mcarma.core.exceptions import AppException, ErrorCode
from mcarma.utils.linalg import frozen

SPOT_CHECK_SIZES = (1e2, 1e4, 1e6)

class CriterionKind(str, Enum):
    AIC = "AIC"
    CAIC = "CAIC"
    BIC = "BIC"
    CUSTOM = "CUSTOM"


class CriterionSpec(BaseModel):
    """
    情報量規準 IC_n(Θ) = L̂(θ̂) + N(Θ) C(n) / n の指定

    CUSTOM は penalty_fn（Python から）か form/scale（JSON から）で C(n) を与える。
    form: "constant" → scale、"log" → scale·log n、"loglog" → scale·log log n
    """
    model_config = ConfigDict(frozen=True)

    kind: CriterionKind
    label: Optional[str] = None
    form: Optional[Literal["constant", "log", "loglog"]] = None
    scale: float = Field(default=1.0, ge=0)
    penalty_fn: Optional[Callable[[float], float]] = Field(default=None, exclude=True)

    @model_validator(mode="after")
    def _check_custom(self):
        if self.kind != CriterionKind.CUSTOM:
            return self
        if self.penalty_fn is None and self.form is None:
            raise AppException(
                error_code=ErrorCode.INVALID_INPUT,
                message="A CUSTOM criterion needs either penalty_fn or form",
            )
        values = [self.penalty_constant(n) for n in SPOT_CHECK_SIZES]
        ratios = [v / n for v, n in zip(values, SPOT_CHECK_SIZES)]
        if min(values) < 0.0 or any(b < a for a, b in zip(values, values[1:])) or ratios[-1] >= ratios[0] > 0.0:
            raise AppException(
                error_code=ErrorCode.INVALID_INPUT,
                message=f"Penalty C(n) of {self.name} must be nonnegative, nondecreasing and o(n)",
                context={"C(n)": dict(zip(SPOT_CHECK_SIZES, values))}
            )
        return self

    @classmethod
    def aic(cls) -> "CriterionSpec":
        return cls(kind=CriterionKind.AIC)

    @classmethod
    def caic(cls) -> "CriterionSpec":
        return cls(kind=CriterionKind.CAIC)

    @classmethod
    def bic(cls) -> "CriterionSpec":
        return cls(kind=CriterionKind.BIC)

    @classmethod
    def custom(cls, penalty_fn: Callable[[float], float], label: str) -> "CriterionSpec":
        return cls(kind=CriterionKind.CUSTOM, penalty_fn=penalty_fn, label=label)

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.kind == CriterionKind.CUSTOM:
            return f"CUSTOM({self.scale:g}*{self.form or 'fn'})"
        return self.kind.value

    def penalty_constant(self, n: float) -> Optional[float]:
        """
        C(n)。AIC はデータ依存のため None
        """
        if self.kind == CriterionKind.AIC:
            return None
        if self.kind == CriterionKind.CAIC:
            return 2.0
        if self.kind == CriterionKind.BIC:
            return float(np.log(n))
        if self.penalty_fn is not None:
            return float(self.penalty_fn(n))
        if self.form == "constant":
            return self.scale
        if self.form == "log":
            return self.scale * float(np.log(n))
        return self.scale * float(np.log(np.log(n)))


class CriterionValue(BaseModel):
    value: float
    penalty: float
    degraded: bool = False


class SpaceScore(BaseModel):
    space_name: str
    n_params: int
    m: list[int]
    q: int
    objective: Optional[float] = None
    theta_hat: Optional[list[float]] = None
    values: dict[str, float] = Field(default_factory=dict)
    penalties: dict[str, float] = Field(default_factory=dict)
    degraded: dict[str, bool] = Field(default_factory=dict)
    error: Optional[dict[str, Any]] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


class OverfitSpectrum(BaseModel):
    """
    Ĥ^{1/2} M̂ Î M̂ Ĥ^{1/2} の固有値。eigenvalues は正の N(Θ) - N(Θ₀) 個
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    eigenvalues: np.ndarray
    spectrum: np.ndarray
    information_ratio_max: float

    @field_validator("eigenvalues", "spectrum", mode="before")
    @classmethod
    def _as_array(cls, v):
        return frozen(v, ndim=1)


class OverfitReport(BaseModel):
    inner: str
    outer: str
    criterion: str
    C: float
    eigenvalues: list[float]
    threshold: float
    probability: float
    simplified_probability: float
    information_ratio_max: float
    empirical_rate: Optional[float] = None
    replications: Optional[int] = None


class SelectionReport(BaseModel):
    per_space: list[SpaceScore]
    criteria: list[str]
    chosen: dict[str, str]
    overfit: Optional[OverfitReport] = None

    def chosen_for(self, criterion: str) -> str:
        return self.chosen[criterion]

    def to_dict(self) -> dict:
        return {"schema_version": 1, **self.model_dump(mode="json")}
