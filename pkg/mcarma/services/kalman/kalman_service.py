from typing import Optional
import numpy as np
from scipy.linalg import cho_factor, expm, solve_triangular
from mcarma.core.config import settings
from mcarma.core.exceptions import AppException, ErrorCode
from mcarma.core.logging import get_logger
from mcarma.models.kalman import DiscretizedModel, LikelihoodValue, ObjectiveEvaluation
from mcarma.models.levy import Sample
from mcarma.models.model_core import ParameterSpace, StateSpaceModel
from mcarma.services.model_core.model_core_service import ModelCoreService
from mcarma.utils.linalg import min_eigenvalue, spectral_radius, symmetrize

logger = get_logger(__name__)

LOG_2PI = np.log(2.0 * np.pi)

class KalmanService:
    @staticmethod
    def matrix_exponential(M: np.ndarray) -> np.ndarray:
        # scaling-and-squaring + Padé 近似
        return expm(np.asarray(M, dtype=float))

    @staticmethod
    def noise_covariance(A: np.ndarray, B: np.ndarray, sigma_L: np.ndarray, h: float) -> np.ndarray:
        """
        Σ_h = ∫_0^h e^{Au} B Σ^L B^T e^{A^T u} du をブロック行列の指数関数で計算する
        """
        A = np.asarray(A, dtype=float)
        if np.any(np.linalg.eigvals(A).real >= 0.0):
            raise AppException(error_code=ErrorCode.INVALID_PARAMETER, message="Noise covariance requires a stable A")
        N = A.shape[0]
        Q = B @ sigma_L @ B.T
        block = np.zeros((2 * N, 2 * N))
        block[:N, :N] = -A
        block[:N, N:] = Q
        block[N:, N:] = A.T
        E = KalmanService.matrix_exponential(block * h)
        # E[:N, N:] = e^{-Ah} Σ_h、E[N:, N:] = e^{A^T h}
        return symmetrize(E[N:, N:].T @ E[:N, N:])

    @staticmethod
    def riccati_residual(Phi: np.ndarray, sigma_h: np.ndarray, C: np.ndarray, omega: np.ndarray) -> float:
        G = Phi @ omega @ C.T
        S = C @ omega @ C.T
        rhs = Phi @ omega @ Phi.T + sigma_h - G @ np.linalg.solve(S, G.T)
        return float(np.linalg.norm(omega - rhs))

    @staticmethod
    def riccati_solve(
        Phi: np.ndarray,
        sigma_h: np.ndarray,
        C: np.ndarray,
        tol: Optional[float] = None,
        max_iter: Optional[int] = None,
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Ω = ΦΩΦ^T + Σ_h - (ΦΩC^T)(CΩC^T)^{-1}(ΦΩC^T)^T の不動点反復。(Ω, K, V) を返す
        """
        omega, K, V, _ = KalmanService._riccati(Phi, sigma_h, C, tol, max_iter)
        return omega, K, V

    @staticmethod
    def _riccati(Phi, sigma_h, C, tol, max_iter) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
        tol = settings.RICCATI_TOL if tol is None else tol
        max_iter = settings.RICCATI_MAX_ITER if max_iter is None else max_iter
        N = Phi.shape[0]

        omega = sigma_h + settings.RICCATI_REGULARIZATION * np.eye(N)
        for iteration in range(1, max_iter + 1):
            G = Phi @ omega @ C.T
            S = C @ omega @ C.T
            try:
                correction = G @ np.linalg.solve(S, G.T)
            except np.linalg.LinAlgError:
                raise AppException(
                    error_code=ErrorCode.SINGULAR_INNOVATION,
                    message="C Ω C^T became singular during the Riccati iteration",
                    context={"iteration": iteration}
                )
            updated = symmetrize(Phi @ omega @ Phi.T + sigma_h - correction)
            if not np.all(np.isfinite(updated)):
                raise AppException(error_code=ErrorCode.RICCATI_DIVERGENCE, message="Riccati iterate is not finite")
            delta = np.linalg.norm(updated - omega)
            omega = updated
            if delta < tol * (1.0 + np.linalg.norm(omega)):
                break
        else:
            raise AppException(
                error_code=ErrorCode.RICCATI_DIVERGENCE,
                message=f"Riccati iteration did not converge in {max_iter} iterations",
                context={"last_step": float(delta)}
            )
        if iteration > 1000:
            logger.debug(f"Riccati iteration converged slowly ({iteration} iterations)")

        V = symmetrize(C @ omega @ C.T)
        if min_eigenvalue(V) < 1e-10:
            raise AppException(
                error_code=ErrorCode.SINGULAR_INNOVATION,
                message="Innovation covariance V is numerically singular",
                context={"min_eigenvalue": min_eigenvalue(V)}
            )
        K = np.linalg.solve(V, (Phi @ omega @ C.T).T).T
        if spectral_radius(Phi - K @ C) >= 1.0:
            raise AppException(error_code=ErrorCode.RICCATI_DIVERGENCE, message="Steady-state filter is not stable")
        return omega, K, V, iteration

    @staticmethod
    def discretize(model: StateSpaceModel, h: float) -> DiscretizedModel:
        Phi = KalmanService.matrix_exponential(model.A * h)
        sigma_h = KalmanService.noise_covariance(model.A, model.B, model.sigma_L, h)
        omega, K, V, iterations = KalmanService._riccati(Phi, sigma_h, model.C, None, None)
        return DiscretizedModel(
            h=h,
            Phi=Phi,
            sigma_h=sigma_h,
            C=model.C,
            omega=omega,
            K=K,
            V=V,
            residual=KalmanService.riccati_residual(Phi, sigma_h, model.C, omega),
            iterations=iterations,
        )

    @staticmethod
    def _cholesky(V: np.ndarray) -> np.ndarray:
        try:
            return cho_factor(V, lower=True)[0]
        except np.linalg.LinAlgError:
            d = V.shape[0]
            try:
                return cho_factor(V + 1e-12 * np.trace(V) / d * np.eye(d), lower=True)[0]
            except np.linalg.LinAlgError:
                raise AppException(error_code=ErrorCode.SINGULAR_INNOVATION, message="Cholesky factorisation of V failed")

    @staticmethod
    def filter(disc: DiscretizedModel, sample: Sample, x_init: Optional[np.ndarray] = None) -> LikelihoodValue:
        """
        予測誤差形式: ε̂_k = Y(kh) - C X̂_k、X̂_{k+1} = (Φ - KC) X̂_k + K Y(kh)
        """
        if sample.d != disc.d:
            raise AppException(
                error_code=ErrorCode.DIMENSION_MISMATCH,
                message=f"Sample dimension {sample.d} does not match model output dimension {disc.d}",
            )
        y = sample.values
        n, d = y.shape
        M = disc.Phi - disc.K @ disc.C
        Ky = y @ disc.K.T

        xhat = np.empty((n, disc.N))
        x = np.zeros(disc.N) if x_init is None else np.asarray(x_init, dtype=float)
        for k in range(n):
            xhat[k] = x
            x = M @ x + Ky[k]
        eps = y - xhat @ disc.C.T

        L = np.tril(KalmanService._cholesky(disc.V))
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        white = solve_triangular(L, eps.T, lower=True)
        per_step = d * LOG_2PI + logdet + np.sum(white ** 2, axis=0)
        return LikelihoodValue(value=float(np.mean(per_step)), innovations=eps, per_step=per_step)

    @staticmethod
    def evaluate(space: ParameterSpace, theta, sample: Sample) -> ObjectiveEvaluation:
        """
        echelon_model → 安定性判定 → 離散化 → Riccati → フィルタ。実行不能な θ は penalty を返す
        """
        penalty = settings.PENALTY_VALUE
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (space.n_params,):
            raise AppException(
                error_code=ErrorCode.DIMENSION_MISMATCH,
                message=f"Space {space.name} expects {space.n_params} parameters, got {theta.shape}",
            )
        if not np.all(np.isfinite(theta)):
            return ObjectiveEvaluation(value=penalty + 1.0, feasible=False, reason="outside box")
        outside = float(np.sum(np.clip(space.lower - theta, 0.0, None) + np.clip(theta - space.upper, 0.0, None)))
        if outside > 0.0:
            return ObjectiveEvaluation(value=penalty + outside + 1.0, feasible=False, reason="outside box")

        try:
            model = ModelCoreService.echelon_model(space, theta)
        except AppException as e:
            return ObjectiveEvaluation(value=penalty + 1.0, feasible=False, reason=e.error_code.name)

        stability = ModelCoreService.is_stable_minimal(model, sample.h)
        if not stability.ok:
            return ObjectiveEvaluation(
                value=penalty + stability.violation,
                feasible=False,
                reason="unstable" if not stability.stable else "not minimal",
                stability=stability,
            )

        try:
            disc = KalmanService.discretize(model, sample.h)
            likelihood = KalmanService.filter(disc, sample)
        except AppException as e:
            if e.error_code == ErrorCode.DIMENSION_MISMATCH:
                raise
            return ObjectiveEvaluation(value=penalty + 1.0, feasible=False, reason=e.error_code.name, stability=stability)

        if not np.isfinite(likelihood.value):
            return ObjectiveEvaluation(value=penalty + 1.0, feasible=False, reason="non-finite likelihood", stability=stability)
        return ObjectiveEvaluation(value=likelihood.value, feasible=True, likelihood=likelihood, stability=stability)

    @staticmethod
    def quasi_log_likelihood(space: ParameterSpace, theta, sample: Sample) -> float:
        return KalmanService.evaluate(space, theta, sample).value
