from typing import Optional
import numpy as np
from mcarma.core.exceptions import AppException, ErrorCode
from mcarma.core.logging import get_logger
from mcarma.models.model_core import (
    EchelonCoefficients,
    KroneckerIndex,
    NestingMap,
    ParameterSpace,
    PolynomialPair,
    StabilityReport,
    StateSpaceModel,
)
from mcarma.utils.linalg import numerical_rank, symmetrize

logger = get_logger(__name__)

# シミュレーション研究で使う真のパラメータ（構造部分のみ、Σ^L は駆動過程から決まる）
STUDY_THETA_1 = (-1.0, -2.0, 1.0, -2.0, -3.0, 0.0, 0.0)
STUDY_THETA_2 = (-1.0, -2.0, 1.0, -2.0, -3.0, 1.0, 2.0)

# (名前, Kronecker index, MA 次数上限)
STUDY_SPACES = (
    ("space1", (1, 1), 0),
    ("space2", (1, 2), 1),
    ("space3", (1, 2), 0),
    ("space4", (2, 1), 1),
    ("space5", (2, 1), 0),
    ("space6", (2, 2), 1),
    ("space7", (2, 2), 0),
    ("space8", (3, 2), 2),
)

class ModelCoreService:
    @staticmethod
    def companion_realization(poly: PolynomialPair, sigma_L: Optional[np.ndarray] = None) -> StateSpaceModel:
        """
        MCARMA(p, q) の多項式対から pd 次元のコンパニオン形式の状態空間表現を作る
        """
        p, q, d, s = poly.p, poly.q, poly.d, poly.s
        N = p * d

        A = np.zeros((N, N))
        for i in range(p - 1):
            A[i * d:(i + 1) * d, (i + 1) * d:(i + 2) * d] = np.eye(d)
        for i in range(1, p + 1):
            # 最下段のブロック行は (-A_p, ..., -A_1)
            col = p - i
            A[(p - 1) * d:, col * d:(col + 1) * d] = -poly.ar_coeffs[i - 1]

        # β_1 = ... = β_{p-q-1} = 0, β_{p-j} = -Σ A_i β_{p-j-i} + B_{q-j}
        beta = [np.zeros((d, s)) for _ in range(p + 1)]
        for j in range(q, -1, -1):
            idx = p - j
            acc = poly.ma_coeffs[q - j].copy()
            for i in range(1, idx):
                acc -= poly.ar_coeffs[i - 1] @ beta[idx - i]
            beta[idx] = acc
        B = np.vstack(beta[1:])

        C = np.zeros((d, N))
        C[:, :d] = np.eye(d)

        model = StateSpaceModel(
            A=A,
            B=B,
            C=C,
            sigma_L=np.eye(s) if sigma_L is None else sigma_L,
        )
        if not model.is_stable:
            logger.warning("Companion realization is not stable", p=p, q=q, d=d)
        return model

    @staticmethod
    def _alpha_blocks(kron: KroneckerIndex, alpha: np.ndarray) -> dict:
        blocks = {}
        pos = 0
        for i in range(kron.d):
            for j in range(kron.d):
                w = kron.width(i, j)
                blocks[(i, j)] = np.asarray(alpha[pos:pos + w], dtype=float)
                pos += w
        return blocks

    @staticmethod
    def _alpha_blocks_from_A(kron: KroneckerIndex, A: np.ndarray) -> dict:
        off = kron.offsets
        return {
            (i, j): A[off[i] + kron.m[i] - 1, off[j]:off[j] + kron.width(i, j)].copy()
            for i in range(kron.d)
            for j in range(kron.d)
        }

    @staticmethod
    def _echelon_A(kron: KroneckerIndex, blocks: dict) -> np.ndarray:
        off, m = kron.offsets, kron.m
        A = np.zeros((kron.N, kron.N))
        for i in range(kron.d):
            for r in range(m[i] - 1):
                A[off[i] + r, off[i] + r + 1] = 1.0
            for j in range(kron.d):
                alpha = blocks[(i, j)]
                A[off[i] + m[i] - 1, off[j]:off[j] + alpha.size] = alpha
        return A

    @staticmethod
    def _echelon_T(kron: KroneckerIndex, blocks: dict) -> np.ndarray:
        off, m = kron.offsets, kron.m
        T = np.zeros((kron.N, kron.N))
        for i in range(kron.d):
            for j in range(kron.d):
                alpha = blocks[(i, j)]
                for r in range(m[i]):
                    for c in range(m[j]):
                        # 1始まりで r + c <= w のとき -α_{ij, r+c}
                        if r + c + 1 < alpha.size:
                            T[off[i] + r, off[j] + c] = -alpha[r + c + 1]
                        if i == j and r + c == m[i] - 1:
                            T[off[i] + r, off[j] + c] = 1.0
        return T

    @staticmethod
    def _echelon_C(kron: KroneckerIndex) -> np.ndarray:
        C = np.zeros((kron.d, kron.N))
        for i, o in enumerate(kron.offsets):
            C[i, o] = 1.0
        return C

    @staticmethod
    def echelon_model(space: ParameterSpace, theta) -> StateSpaceModel:
        """
        θ ↦ (A_θ, B_θ, C_θ, Σ^L_θ)。A が不安定でもそのまま返す（安定性判定は呼び出し側）
        """
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (space.n_params,):
            raise AppException(
                error_code=ErrorCode.DIMENSION_MISMATCH,
                message=f"Space {space.name} expects {space.n_params} parameters, got {theta.shape}",
            )
        if not space.contains(theta):
            raise AppException(
                error_code=ErrorCode.INVALID_PARAMETER,
                message=f"Parameter outside the box of space {space.name}",
                context={"theta": theta.tolist()}
            )

        kron = space.kronecker
        alpha, kappa, chol = space.split(theta)
        blocks = ModelCoreService._alpha_blocks(kron, alpha)
        A = ModelCoreService._echelon_A(kron, blocks)
        T = ModelCoreService._echelon_T(kron, blocks)

        K = np.zeros((kron.N, space.s))
        for i, o in enumerate(kron.offsets):
            K[o, i] = 1.0
        for value, (row, col) in zip(kappa, space.kappa_slots):
            K[row, col] = value
        try:
            B = np.linalg.solve(T, K)
        except np.linalg.LinAlgError as e:
            raise AppException(
                error_code=ErrorCode.NUMERIC_FAILURE,
                message="Echelon matrix T is singular",
                context={"space": space.name, "error": str(e)}
            )

        L = np.zeros((space.s, space.s))
        for value, (r, c) in zip(chol, space.chol_slots):
            L[r, c] = value

        return StateSpaceModel(
            A=A,
            B=B,
            C=ModelCoreService._echelon_C(kron),
            sigma_L=symmetrize(L @ L.T),
        )

    @staticmethod
    def echelon_coefficients(model: StateSpaceModel, m: KroneckerIndex) -> EchelonCoefficients:
        """
        p_ij(z) = δ_ij z^{m_i} - Σ α_{ij,k} z^{k-1}, q_ij(z) = Σ κ_{ν_i + k, j} z^{k-1} の係数を読み取る
        """
        if m.N != model.N or m.d != model.d:
            raise AppException(
                error_code=ErrorCode.INVALID_INPUT,
                message=f"Kronecker index {m.m} is inconsistent with state dimension {model.N}",
            )
        blocks = ModelCoreService._alpha_blocks_from_A(m, model.A)
        K = ModelCoreService._echelon_T(m, blocks) @ model.B

        d, s, p = m.d, model.s, m.p
        P = np.zeros((p + 1, d, d))
        Q = np.zeros((p, d, s))
        for i in range(d):
            P[m.m[i], i, i] = 1.0
            for j in range(d):
                for k, a in enumerate(blocks[(i, j)]):
                    P[k, i, j] -= a
            for k in range(m.m[i]):
                Q[k, i, :] = K[m.offsets[i] + k, :]
        return EchelonCoefficients(kronecker=m, p_coeffs=P, q_coeffs=Q)

    @staticmethod
    def echelon_polynomials(model: StateSpaceModel, m: KroneckerIndex) -> PolynomialPair:
        """
        Echelon形式の (P, Q) を diag(z^{p-m_i}) と行先頭係数行列の逆で左から正規化し、
        P がモニックな PolynomialPair として返す（伝達関数は不変）
        """
        raw = ModelCoreService.echelon_coefficients(model, m)
        d, p = m.d, m.p
        DP = np.zeros((p + 1, d, d))
        DQ = np.zeros((p, d, raw.q_coeffs.shape[2]))
        for i in range(d):
            shift = p - m.m[i]
            DP[shift:shift + m.m[i] + 1, i, :] = raw.p_coeffs[:m.m[i] + 1, i, :]
            DQ[shift:shift + m.m[i], i, :] = raw.q_coeffs[:m.m[i], i, :]

        lead = DP[p]
        P_monic = np.stack([np.linalg.solve(lead, DP[k]) for k in range(p + 1)])
        Q_norm = np.stack([np.linalg.solve(lead, DQ[k]) for k in range(p)])

        nonzero = [k for k in range(p) if np.any(Q_norm[k] != 0.0)]
        if not nonzero:
            raise AppException(error_code=ErrorCode.INVALID_INPUT, message="Moving-average polynomial is identically zero")
        q = max(nonzero)
        return PolynomialPair(
            ar_coeffs=np.stack([P_monic[p - i] for i in range(1, p + 1)]),
            ma_coeffs=np.stack([Q_norm[q - j] for j in range(q + 1)]),
        )

    @staticmethod
    def transfer_function(model: StateSpaceModel, z: complex) -> np.ndarray:
        return model.C @ np.linalg.solve(z * np.eye(model.N) - model.A, model.B)

    @staticmethod
    def is_stable_minimal(model: StateSpaceModel, h: float) -> StabilityReport:
        """
        安定性 (Re λ < 0, |Im λ| < π/h) と最小性（可制御・可観測行列のランク N）の判定
        """
        N = model.N
        eig = np.linalg.eigvals(model.A)
        nyquist = np.pi / h
        stable = bool(np.all(eig.real < 0.0) and np.all(np.abs(eig.imag) < nyquist))

        blocks_c, blocks_o = [], []
        AkB, CAk = model.B, model.C
        for _ in range(N):
            blocks_c.append(AkB)
            blocks_o.append(CAk)
            AkB = model.A @ AkB
            CAk = CAk @ model.A
        rank_c = numerical_rank(np.hstack(blocks_c), N)
        rank_o = numerical_rank(np.vstack(blocks_o), N)
        minimal = rank_c == N and rank_o == N

        violation = float(
            np.sum(np.clip(eig.real, 0.0, None))
            + np.sum(np.clip(np.abs(eig.imag) - nyquist, 0.0, None))
            + (N - rank_c)
            + (N - rank_o)
        )
        if not (stable and minimal):
            violation += 1.0

        return StabilityReport(
            stable=stable,
            minimal=minimal,
            max_real_part=float(np.max(eig.real)),
            max_abs_imag=float(np.max(np.abs(eig.imag))),
            controllability_rank=rank_c,
            observability_rank=rank_o,
            state_dim=N,
            violation=violation,
        )

    @staticmethod
    def nesting_map(inner: ParameterSpace, outer: ParameterSpace) -> NestingMap:
        """
        同じ Kronecker index で MA 次数上限だけが異なる空間の座標埋め込み行列 F（c = 0）
        """
        if inner.kronecker != outer.kronecker or inner.ma_cap >= outer.ma_cap:
            raise AppException(
                error_code=ErrorCode.NOT_NESTED,
                message=f"Space {inner.name} is not nested in {outer.name}",
                context={
                    "inner": inner.describe(),
                    "outer": outer.describe(),
                }
            )
        if inner.bound > outer.bound or inner.chol_floor < outer.chol_floor:
            raise AppException(
                error_code=ErrorCode.NOT_NESTED,
                message=f"Box of {inner.name} is not contained in the box of {outer.name}",
            )

        position = {key: idx for idx, key in enumerate(outer.slot_keys)}
        F = np.zeros((outer.n_params, inner.n_params))
        for col, key in enumerate(inner.slot_keys):
            F[position[key], col] = 1.0
        return NestingMap(F=F, c=np.zeros(outer.n_params))

    @staticmethod
    def study_spaces() -> list[ParameterSpace]:
        return [
            ParameterSpace(name=name, kronecker=KroneckerIndex(m=m), ma_cap=q)
            for name, m, q in STUDY_SPACES
        ]

    @staticmethod
    def study_space(name: str) -> ParameterSpace:
        for space in ModelCoreService.study_spaces():
            if space.name == name:
                return space
        raise AppException(error_code=ErrorCode.INVALID_INPUT, message=f"Unknown study space: {name}")
