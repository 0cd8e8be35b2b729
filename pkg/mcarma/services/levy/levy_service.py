from typing import Optional
import numpy as np
from scipy.linalg import solve_continuous_lyapunov
from mcarma.core.exceptions import AppException, ErrorCode
from mcarma.core.logging import get_logger
from mcarma.models.levy import DriverKind, DriverMoments, DriverSpec, Sample, SimulatedPath
from mcarma.models.model_core import StateSpaceModel
from mcarma.services.kalman.kalman_service import KalmanService
from mcarma.utils.linalg import psd_sqrt, symmetrize

logger = get_logger(__name__)

class LevyService:
    @staticmethod
    def driver_moments(spec: DriverSpec) -> DriverMoments:
        """
        単位時間あたりの平均と共分散
        """
        if spec.kind == DriverKind.BROWNIAN:
            sigma = np.asarray(spec.sigma, dtype=float)
            return DriverMoments(mean=np.zeros(sigma.shape[0]), cov=sigma)

        if spec.kappa_squared <= 0.0:
            raise AppException(error_code=ErrorCode.INVALID_PARAMETER, message="kappa^2 must be positive")
        kappa = np.sqrt(spec.kappa_squared)
        Delta = np.asarray(spec.Delta, dtype=float)
        Db = Delta @ np.asarray(spec.beta, dtype=float)
        mean = np.asarray(spec.mu, dtype=float) + spec.delta * Db / kappa
        cov = spec.delta * Delta / kappa + spec.delta * np.outer(Db, Db) / kappa ** 3
        return DriverMoments(mean=mean, cov=symmetrize(cov))

    @staticmethod
    def sample_increments(spec: DriverSpec, dt: float, count: int, rng: np.random.Generator) -> np.ndarray:
        """
        時間幅 dt の独立な増分を count 個生成する（NIG は逆ガウス従属過程による）
        """
        if dt <= 0.0:
            raise AppException(error_code=ErrorCode.INVALID_INPUT, message=f"Time step must be positive, got {dt}")
        if count < 0:
            raise AppException(error_code=ErrorCode.INVALID_INPUT, message=f"Increment count must be non-negative, got {count}")

        if spec.kind == DriverKind.BROWNIAN:
            sigma = np.asarray(spec.sigma, dtype=float)
            root = np.linalg.cholesky(sigma * dt)
            return rng.standard_normal((count, sigma.shape[0])) @ root.T

        s = spec.dim
        kappa = np.sqrt(spec.kappa_squared)
        Delta = np.asarray(spec.Delta, dtype=float)
        Db = Delta @ np.asarray(spec.beta, dtype=float)
        scale = spec.delta * dt
        # 逆ガウス分布 IG(平均 δdt/κ, 形状 (δdt)^2)。numpy の wald は Michael-Schucany-Haas 変換法
        Z = rng.wald(scale / kappa, scale ** 2, size=count)
        W = rng.standard_normal((count, s)) @ psd_sqrt(Delta).T
        mu = np.asarray(spec.mu, dtype=float)
        return mu * dt + Z[:, None] * Db + np.sqrt(Z)[:, None] * W

    @staticmethod
    def euler_maruyama(
        model: StateSpaceModel,
        spec: DriverSpec,
        horizon: float,
        step: float,
        rng: np.random.Generator,
        x0: Optional[np.ndarray] = None,
        burn_in: float = 0.0,
    ) -> SimulatedPath:
        """
        X_{k+1} = X_k + A X_k step + B ΔL_k。burn_in は horizon に対する割合で、先頭に追加して捨てる
        """
        if step <= 0.0 or horizon <= 0.0:
            raise AppException(error_code=ErrorCode.INVALID_INPUT, message="Horizon and step must be positive")
        n_steps = int(round(horizon / step))
        if n_steps < 1 or abs(n_steps * step - horizon) > 1e-9 * max(1.0, horizon):
            raise AppException(
                error_code=ErrorCode.INVALID_INPUT,
                message=f"Horizon {horizon} is not a multiple of the Euler step {step}",
            )
        if spec.dim != model.s:
            raise AppException(
                error_code=ErrorCode.DIMENSION_MISMATCH,
                message=f"Driver dimension {spec.dim} does not match model input dimension {model.s}",
            )
        if burn_in < 0.0:
            raise AppException(error_code=ErrorCode.INVALID_INPUT, message="burn_in must be non-negative")
        if not model.is_stable:
            logger.warning("Simulating an unstable model", max_real_part=float(np.max(np.linalg.eigvals(model.A).real)))

        extra = int(round(burn_in * n_steps))
        total = n_steps + extra
        dL = LevyService.sample_increments(spec, step, total, rng)
        noise = dL @ model.B.T
        M = np.eye(model.N) + step * model.A

        X = np.empty((total + 1, model.N))
        X[0] = np.zeros(model.N) if x0 is None else np.asarray(x0, dtype=float)
        for k in range(total):
            X[k + 1] = M @ X[k] + noise[k]
        return SimulatedPath(step=step, states=X[extra:])

    @staticmethod
    def observe(model: StateSpaceModel, path: SimulatedPath, h: float) -> Sample:
        """
        Y(kh) = C X(kh) をグリッドの倍数点で読み取る。n = floor(T/h)
        """
        ratio = h / path.step
        r = int(round(ratio))
        if r < 1 or abs(r - ratio) > 1e-9 * max(1.0, ratio):
            raise AppException(
                error_code=ErrorCode.INVALID_INPUT,
                message=f"Sampling distance {h} is not a multiple of the Euler step {path.step}",
            )
        n = (path.states.shape[0] - 1) // r
        if n < 1:
            raise AppException(error_code=ErrorCode.INVALID_INPUT, message="Path is shorter than one sampling interval")
        idx = r * np.arange(1, n + 1)
        return Sample(h=h, values=path.states[idx] @ model.C.T)

    @staticmethod
    def simulate_sample(
        model: StateSpaceModel,
        spec: DriverSpec,
        n: int,
        h: float,
        step: float,
        rng: np.random.Generator,
        burn_in: float = 0.0,
    ) -> Sample:
        path = LevyService.euler_maruyama(model, spec, n * h, step, rng, burn_in=burn_in)
        return LevyService.observe(model, path, h)

    @staticmethod
    def stationary_covariance(model: StateSpaceModel) -> np.ndarray:
        """
        A Ω + Ω A^T + B Σ^L B^T = 0 の解
        """
        if not model.is_stable:
            raise AppException(error_code=ErrorCode.INVALID_PARAMETER, message="Stationary covariance requires a stable model")
        Q = model.B @ model.sigma_L @ model.B.T
        return symmetrize(solve_continuous_lyapunov(model.A, -Q))

    @staticmethod
    def exact_gaussian_sample(
        model: StateSpaceModel,
        sigma_L: np.ndarray,
        h: float,
        n: int,
        rng: np.random.Generator,
        spec: Optional[DriverSpec] = None,
    ) -> Sample:
        """
        離散化誤差のないガウス標本: X(0) ~ N(0, Ω_∞)、X(kh) = e^{Ah} X((k-1)h) + N_{h,k}
        """
        if spec is not None and spec.kind != DriverKind.BROWNIAN:
            raise AppException(error_code=ErrorCode.UNSUPPORTED, message="Exact sampling requires a Brownian driver")
        if n < 1 or h <= 0.0:
            raise AppException(error_code=ErrorCode.INVALID_INPUT, message="n must be positive and h > 0")

        sigma_L = np.asarray(sigma_L, dtype=float)
        gaussian = model.model_copy(update={"sigma_L": sigma_L})
        omega_inf = LevyService.stationary_covariance(gaussian)
        Phi = KalmanService.matrix_exponential(model.A * h)
        sigma_h = KalmanService.noise_covariance(model.A, model.B, sigma_L, h)

        x = psd_sqrt(omega_inf) @ rng.standard_normal(model.N)
        noise = rng.standard_normal((n, model.N)) @ psd_sqrt(sigma_h).T
        X = np.empty((n, model.N))
        for k in range(n):
            x = Phi @ x + noise[k]
            X[k] = x
        return Sample(h=h, values=X @ model.C.T)
