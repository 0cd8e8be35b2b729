from typing import Any, Optional, Union
from pydantic import BaseModel, ConfigDict, Field, model_validator
from mcarma.core.exceptions import AppException, ErrorCode
from mcarma.models.levy import DriverSpec
from mcarma.models.model_core import SpaceConfig
from mcarma.models.qmle import FitOptions
from mcarma.models.selection import CriterionKind, CriterionSpec, OverfitReport

# 文字列はシミュレーション研究のカタログ名（"space1" ... "space8"）
SpaceRef = Union[str, SpaceConfig]

def _default_criteria() -> list[CriterionSpec]:
    return [CriterionSpec(kind=CriterionKind.AIC), CriterionSpec(kind=CriterionKind.CAIC), CriterionSpec(kind=CriterionKind.BIC)]

def _check_criteria(criteria: list[CriterionSpec], nested_pair: Optional["NestedPair"]):
    """
    規準名の重複と、入れ子ペアの規準が criteria に含まれることを確認する
    """
    names = [c.name for c in criteria]
    if len(set(names)) != len(names):
        raise AppException(error_code=ErrorCode.INVALID_INPUT, message=f"Duplicate criterion names: {names}")
    if nested_pair is not None and nested_pair.criterion not in names:
        raise AppException(
            error_code=ErrorCode.INVALID_INPUT,
            message=f"Nested-pair criterion {nested_pair.criterion} is not among {names}",
        )


class TrueModelConfig(BaseModel):
    """
    データ生成モデル。theta は構造パラメータ（α, κ）で、Σ^L は駆動過程の共分散から決まる
    """
    space: SpaceRef
    theta: list[float]
    driver: DriverSpec


class NestedPair(BaseModel):
    inner: str
    outer: str
    criterion: str = "CAIC"


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    true_model: TrueModelConfig
    candidate_spaces: list[SpaceRef] = Field(min_length=1)
    criteria: list[CriterionSpec] = Field(default_factory=_default_criteria, min_length=1)
    n: int = Field(default=2000, ge=1)
    h: float = Field(default=1.0, gt=0)
    euler_step: float = Field(default=0.01, gt=0)
    horizon: Optional[float] = None
    burn_in: float = Field(default=0.0, ge=0)
    replications: int = Field(default=50, ge=1)
    master_seed: int = Field(default=0, ge=0)
    threads: Optional[int] = Field(default=None, ge=1)
    fit: FitOptions = Field(default_factory=FitOptions)
    nested_pair: Optional[NestedPair] = None
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def _check_grid(self):
        ratio = self.h / self.euler_step
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
            raise AppException(
                error_code=ErrorCode.INVALID_INPUT,
                message=f"Euler step {self.euler_step} does not divide h = {self.h}",
            )
        if self.horizon is not None and abs(self.horizon - self.n * self.h) > 1e-9 * max(1.0, self.horizon):
            raise AppException(
                error_code=ErrorCode.INVALID_INPUT,
                message=f"horizon {self.horizon} differs from n*h = {self.n * self.h}",
            )
        _check_criteria(self.criteria, self.nested_pair)
        return self


class FitJobConfig(BaseModel):
    space: SpaceRef
    data: str
    h: Optional[float] = Field(default=None, gt=0)
    fit: FitOptions = Field(default_factory=FitOptions)


class SelectJobConfig(BaseModel):
    spaces: Optional[list[SpaceRef]] = None
    spaces_dir: Optional[str] = None
    data: str
    h: Optional[float] = Field(default=None, gt=0)
    criteria: list[CriterionSpec] = Field(default_factory=_default_criteria, min_length=1)
    fit: FitOptions = Field(default_factory=FitOptions)
    nested_pair: Optional[NestedPair] = None

    @model_validator(mode="after")
    def _check_spaces(self):
        if not self.spaces and not self.spaces_dir:
            raise AppException(error_code=ErrorCode.INVALID_INPUT, message="Either spaces or spaces_dir is required")
        _check_criteria(self.criteria, self.nested_pair)
        return self


class ReplicationOutcome(BaseModel):
    """
    1回の反復（シミュレーション + 選択）の結果。Ĥ/Î は入れ子ペアの外側空間のもの
    """
    replication: int
    chosen: dict[str, str] = Field(default_factory=dict)
    values: dict[str, dict[str, float]] = Field(default_factory=dict)
    overfit: Optional[bool] = None
    H_outer: Optional[list[list[float]]] = None
    I_outer: Optional[list[list[float]]] = None
    error: Optional[dict[str, Any]] = None


class ReplicationSummary(BaseModel):
    replications: int
    failures: int
    criteria: list[str]
    spaces: list[dict[str, Any]]
    counts: dict[str, dict[str, int]]
    overfit: Optional[OverfitReport] = None
    overfit_error: Optional[dict[str, Any]] = None

    def to_dict(self) -> dict:
        return {"schema_version": 1, **self.model_dump(mode="json")}
