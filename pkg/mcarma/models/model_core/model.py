from functools import cached_property
from typing import Optional
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from mcarma.core.config import settings
from mcarma.core.exceptions import AppException, ErrorCode
from mcarma.utils.linalg import frozen, numerical_rank, min_eigenvalue

_ARRAYS = ConfigDict(arbitrary_types_allowed=True, frozen=True)

class PolynomialPair(BaseModel):
    """
    P(z) = I z^p + A_1 z^{p-1} + ... + A_p,  Q(z) = B_0 z^q + ... + B_q
    ar_coeffs: (p, d, d)、ma_coeffs: (q+1, d, s)
    """
    model_config = _ARRAYS

    ar_coeffs: np.ndarray
    ma_coeffs: np.ndarray

    @field_validator("ar_coeffs", "ma_coeffs", mode="before")
    @classmethod
    def _as_array(cls, v):
        return frozen(v, ndim=3)

    @model_validator(mode="after")
    def _check(self):
        p, d, d2 = self.ar_coeffs.shape
        q1, d3, _ = self.ma_coeffs.shape
        if p < 1 or d != d2 or d3 != d:
            raise AppException(
                error_code=ErrorCode.INVALID_INPUT,
                message="AR and MA coefficient shapes do not match",
                context={"ar_shape": self.ar_coeffs.shape, "ma_shape": self.ma_coeffs.shape}
            )
        if q1 - 1 >= p:
            raise AppException(
                error_code=ErrorCode.INVALID_INPUT,
                message=f"MA degree {q1 - 1} must be smaller than AR degree {p}",
            )
        if not np.any(self.ma_coeffs[0] != 0.0):
            raise AppException(error_code=ErrorCode.INVALID_INPUT, message="B_0 must not be the zero matrix")
        return self

    @property
    def p(self) -> int:
        return self.ar_coeffs.shape[0]

    @property
    def q(self) -> int:
        return self.ma_coeffs.shape[0] - 1

    @property
    def d(self) -> int:
        return self.ar_coeffs.shape[1]

    @property
    def s(self) -> int:
        return self.ma_coeffs.shape[2]

    def ar_polynomial(self, z: complex) -> np.ndarray:
        P = np.eye(self.d, dtype=complex) * z ** self.p
        for i, Ai in enumerate(self.ar_coeffs, start=1):
            P = P + Ai * z ** (self.p - i)
        return P

    def ma_polynomial(self, z: complex) -> np.ndarray:
        Q = np.zeros((self.d, self.s), dtype=complex)
        for j, Bj in enumerate(self.ma_coeffs):
            Q = Q + Bj * z ** (self.q - j)
        return Q

    def transfer_function(self, z: complex) -> np.ndarray:
        return np.linalg.solve(self.ar_polynomial(z), self.ma_polynomial(z))


class StateSpaceModel(BaseModel):
    """
    dX = AX dt + B dL,  Y = CX,  Cov(L(1)) = sigma_L
    """
    model_config = _ARRAYS

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    sigma_L: np.ndarray

    @field_validator("A", "B", "C", "sigma_L", mode="before")
    @classmethod
    def _as_array(cls, v):
        return frozen(v, ndim=2)

    @model_validator(mode="after")
    def _check(self):
        N = self.A.shape[0]
        s = self.B.shape[1]
        if self.A.shape != (N, N) or self.B.shape[0] != N or self.C.shape[1] != N or self.sigma_L.shape != (s, s):
            raise AppException(
                error_code=ErrorCode.DIMENSION_MISMATCH,
                message="State-space matrices have inconsistent shapes",
                context={"A": self.A.shape, "B": self.B.shape, "C": self.C.shape, "sigma_L": self.sigma_L.shape}
            )
        if not np.all(np.isfinite(self.A)) or not np.all(np.isfinite(self.B)):
            raise AppException(error_code=ErrorCode.INVALID_PARAMETER, message="State-space matrices must be finite")
        if np.max(np.abs(self.sigma_L - self.sigma_L.T), initial=0.0) > 1e-12:
            raise AppException(error_code=ErrorCode.INVALID_PARAMETER, message="sigma_L must be symmetric")
        if min_eigenvalue(self.sigma_L) <= 0.0:
            raise AppException(error_code=ErrorCode.INVALID_PARAMETER, message="sigma_L must be positive definite")
        if numerical_rank(self.C, N) != self.C.shape[0]:
            raise AppException(error_code=ErrorCode.INVALID_PARAMETER, message="C must have full row rank")
        return self

    @property
    def N(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.C.shape[0]

    @property
    def s(self) -> int:
        return self.B.shape[1]

    @property
    def is_stable(self) -> bool:
        return bool(np.all(np.linalg.eigvals(self.A).real < 0.0))


class StabilityReport(BaseModel):
    stable: bool
    minimal: bool
    max_real_part: float
    max_abs_imag: float
    controllability_rank: int
    observability_rank: int
    state_dim: int
    violation: float = 0.0

    @property
    def ok(self) -> bool:
        return self.stable and self.minimal


class KroneckerIndex(BaseModel):
    model_config = ConfigDict(frozen=True)

    m: tuple[int, ...]

    @field_validator("m")
    @classmethod
    def _positive(cls, v):
        if len(v) == 0 or any(mi < 1 for mi in v):
            raise ValueError("Kronecker index entries must be positive integers")
        return tuple(int(mi) for mi in v)

    @property
    def d(self) -> int:
        return len(self.m)

    @property
    def N(self) -> int:
        return sum(self.m)

    @property
    def p(self) -> int:
        return max(self.m)

    @property
    def offsets(self) -> tuple[int, ...]:
        # 各出力ブロックの開始行
        return tuple(int(o) for o in np.concatenate([[0], np.cumsum(self.m)[:-1]]))

    def width(self, i: int, j: int) -> int:
        # 0始まりの (i, j) ブロックでの自由なαの個数 min(m_i + 1_{i>j}, m_j)
        return min(self.m[i] + (1 if i > j else 0), self.m[j])


class ParameterSpace(BaseModel):
    """
    Echelon形式の候補パラメータ空間

    θ = (α, κ, chol) の順。α は (i, j, k) の辞書順、κ は MA 次数上限以下の K=TB の自由な行、
    chol は Σ^L のコレスキー因子の下三角（行優先）。
    """
    model_config = ConfigDict(frozen=True)

    name: str = "space"
    kronecker: KroneckerIndex
    ma_cap: int = Field(ge=0)
    bound: float = Field(default_factory=lambda: settings.DEFAULT_BOX_BOUND, gt=0)
    chol_floor: float = Field(default_factory=lambda: settings.CHOLESKY_DIAGONAL_FLOOR, gt=0)

    @model_validator(mode="after")
    def _check(self):
        if self.ma_cap > self.kronecker.p - 1:
            raise AppException(
                error_code=ErrorCode.INVALID_INPUT,
                message=f"MA cap {self.ma_cap} exceeds p - 1 = {self.kronecker.p - 1}",
                context={"space": self.name}
            )
        if self.chol_floor >= self.bound:
            raise AppException(error_code=ErrorCode.INVALID_INPUT, message="Cholesky floor must be below the box bound")
        return self

    @property
    def d(self) -> int:
        return self.kronecker.d

    @property
    def s(self) -> int:
        return self.kronecker.d

    @cached_property
    def alpha_slots(self) -> tuple[tuple[int, int, int], ...]:
        d = self.d
        return tuple(
            (i, j, k)
            for i in range(d)
            for j in range(d)
            for k in range(self.kronecker.width(i, j))
        )

    @cached_property
    def kappa_slots(self) -> tuple[tuple[int, int], ...]:
        # z^k の係数行 (k = 1..min(m_i - 1, q)) のみ自由、z^0 の行は単位行列に固定
        slots = []
        for i, mi in enumerate(self.kronecker.m):
            for k in range(1, min(mi - 1, self.ma_cap) + 1):
                row = self.kronecker.offsets[i] + k
                slots.extend((row, col) for col in range(self.s))
        return tuple(slots)

    @cached_property
    def chol_slots(self) -> tuple[tuple[int, int], ...]:
        return tuple((r, c) for r in range(self.s) for c in range(r + 1))

    @cached_property
    def slot_keys(self) -> tuple[tuple, ...]:
        return (
            tuple(("alpha",) + slot for slot in self.alpha_slots)
            + tuple(("kappa",) + slot for slot in self.kappa_slots)
            + tuple(("chol",) + slot for slot in self.chol_slots)
        )

    @property
    def n_alpha(self) -> int:
        return len(self.alpha_slots)

    @property
    def n_kappa(self) -> int:
        return len(self.kappa_slots)

    @property
    def n_structural(self) -> int:
        return self.n_alpha + self.n_kappa

    @property
    def n_params(self) -> int:
        return self.n_structural + len(self.chol_slots)

    @cached_property
    def lower(self) -> np.ndarray:
        lo = np.full(self.n_params, -self.bound)
        for idx, (r, c) in enumerate(self.chol_slots):
            if r == c:
                lo[self.n_structural + idx] = self.chol_floor
        return frozen(lo)

    @cached_property
    def upper(self) -> np.ndarray:
        return frozen(np.full(self.n_params, self.bound))

    @property
    def center(self) -> np.ndarray:
        return (self.lower + self.upper) / 2.0

    def contains(self, theta: np.ndarray) -> bool:
        theta = np.asarray(theta, dtype=float)
        return theta.shape == (self.n_params,) and bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))

    def split(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        return (
            theta[: self.n_alpha],
            theta[self.n_alpha: self.n_structural],
            theta[self.n_structural:],
        )

    def cholesky_coordinates(self, sigma_L: np.ndarray) -> np.ndarray:
        L = np.linalg.cholesky(np.asarray(sigma_L, dtype=float))
        return np.array([L[r, c] for r, c in self.chol_slots])

    def theta_from(self, structural, sigma_L: np.ndarray) -> np.ndarray:
        """
        構造パラメータ（α, κ）と Σ^L から θ 全体を組み立てる
        """
        structural = np.asarray(structural, dtype=float)
        if structural.shape != (self.n_structural,):
            raise AppException(
                error_code=ErrorCode.DIMENSION_MISMATCH,
                message=f"Space {self.name} expects {self.n_structural} structural parameters, got {structural.shape}",
            )
        return np.concatenate([structural, self.cholesky_coordinates(sigma_L)])

    def describe(self) -> dict:
        return {
            "name": self.name,
            "m": list(self.kronecker.m),
            "p": self.kronecker.p,
            "q": self.ma_cap,
            "n_params": self.n_params,
        }


class NestingMap(BaseModel):
    """
    Θ₀ ↪ Θ の埋め込み θ ↦ Fθ + c
    """
    model_config = _ARRAYS

    F: np.ndarray
    c: np.ndarray

    @field_validator("F", mode="before")
    @classmethod
    def _as_matrix(cls, v):
        return frozen(v, ndim=2)

    @field_validator("c", mode="before")
    @classmethod
    def _as_vector(cls, v):
        return frozen(v, ndim=1)

    @model_validator(mode="after")
    def _check(self):
        n_outer, n_inner = self.F.shape
        if self.c.shape != (n_outer,):
            raise AppException(error_code=ErrorCode.DIMENSION_MISMATCH, message="Offset c does not match F")
        if n_inner >= n_outer:
            raise AppException(
                error_code=ErrorCode.NOT_NESTED,
                message=f"Inner space must have fewer parameters ({n_inner} >= {n_outer})",
            )
        if np.max(np.abs(self.F.T @ self.F - np.eye(n_inner))) > 1e-12:
            raise AppException(error_code=ErrorCode.NOT_NESTED, message="F^T F must be the identity")
        return self

    @property
    def n_inner(self) -> int:
        return self.F.shape[1]

    @property
    def n_outer(self) -> int:
        return self.F.shape[0]

    def embed(self, theta: np.ndarray) -> np.ndarray:
        return self.F @ np.asarray(theta, dtype=float) + self.c


class EchelonCoefficients(BaseModel):
    """
    Echelon形式から読み取った p_ij, q_ij の係数（インデックス = z の次数）
    """
    model_config = _ARRAYS

    kronecker: KroneckerIndex
    p_coeffs: np.ndarray
    q_coeffs: np.ndarray

    @field_validator("p_coeffs", "q_coeffs", mode="before")
    @classmethod
    def _as_array(cls, v):
        return frozen(v, ndim=3)

    @property
    def ma_degree(self) -> int:
        nonzero = [k for k in range(self.q_coeffs.shape[0]) if np.any(self.q_coeffs[k] != 0.0)]
        return max(nonzero) if nonzero else 0

    def evaluate(self, z: complex) -> tuple[np.ndarray, np.ndarray]:
        powers = z ** np.arange(self.p_coeffs.shape[0])
        P = np.tensordot(powers, self.p_coeffs, axes=1)
        powers = z ** np.arange(self.q_coeffs.shape[0])
        Q = np.tensordot(powers, self.q_coeffs, axes=1)
        return P, Q

    def transfer_function(self, z: complex) -> np.ndarray:
        P, Q = self.evaluate(z)
        return np.linalg.solve(P, Q)


class SpaceConfig(BaseModel):
    name: str
    kronecker: list[int]
    ma_cap: int = 0
    bound: Optional[float] = None

    def to_space(self) -> ParameterSpace:
        kwargs = {} if self.bound is None else {"bound": self.bound}
        return ParameterSpace(
            name=self.name,
            kronecker=KroneckerIndex(m=tuple(self.kronecker)),
            ma_cap=self.ma_cap,
            **kwargs
        )



class ModelFile(BaseModel):
    """
    モデルファイル: {kronecker, ma_cap, theta, sigma_chol}
    theta は構造パラメータ（α, κ）、sigma_chol はコレスキー因子の下三角（行優先）
    """
    name: str = "model"
    kronecker: list[int]
    ma_cap: int = 0
    theta: list[float]
    sigma_chol: Optional[list[float]] = None

    @classmethod
    def from_theta(cls, space: ParameterSpace, theta) -> "ModelFile":
        structural, _, _ = np.split(np.asarray(theta, dtype=float), [space.n_structural, space.n_params])
        return cls(
            name=space.name,
            kronecker=list(space.kronecker.m),
            ma_cap=space.ma_cap,
            theta=structural.tolist(),
            sigma_chol=np.asarray(theta, dtype=float)[space.n_structural:].tolist(),
        )

    def to_space(self) -> ParameterSpace:
        return SpaceConfig(name=self.name, kronecker=self.kronecker, ma_cap=self.ma_cap).to_space()

    def full_theta(self) -> np.ndarray:
        space = self.to_space()
        if self.sigma_chol is None:
            return space.theta_from(self.theta, np.eye(space.s))
        chol = np.asarray(self.sigma_chol, dtype=float)
        if len(self.theta) != space.n_structural or chol.shape != (len(space.chol_slots),):
            raise AppException(
                error_code=ErrorCode.DIMENSION_MISMATCH,
                message=f"Model file for {space.name} needs {space.n_structural} structural and {len(space.chol_slots)} Cholesky entries",
            )
        return np.concatenate([np.asarray(self.theta, dtype=float), chol])
