from typing import Callable, Optional
import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc
from statsmodels.stats.sandwich_covariance import S_hac_simple
from statsmodels.tools.numdiff import approx_fprime, approx_hess1, approx_hess3
from mcarma.core.config import settings
from mcarma.core.exceptions import AppException, ErrorCode
from mcarma.core.logging import get_logger
from mcarma.models.levy import Sample
from mcarma.models.model_core import ParameterSpace
from mcarma.models.qmle import FitOptions, FitResult, StartResult
from mcarma.services.kalman.kalman_service import KalmanService
from mcarma.utils.linalg import MACHINE_EPS, symmetrize
from mcarma.utils.rng import PURPOSE_STARTS, stream

logger = get_logger(__name__)

MAX_STEP_HALVINGS = 6
SINGULAR_CONDITION = 1e12

class _Tracked:
    """
    評価値がペナルティ水準に達したかを記録する目的関数ラッパー
    """
    def __init__(self, fn: Callable, penalty: float):
        self.fn = fn
        self.penalty = penalty
        self.infeasible = False

    def __call__(self, theta):
        value = self.fn(theta)
        if value is None or not np.all(np.isfinite(value)) or np.max(value) >= self.penalty:
            self.infeasible = True
            return np.zeros_like(value) if value is not None else 0.0
        return value


class QmleService:
    @staticmethod
    def start_points(space: ParameterSpace, opts: FitOptions) -> list[np.ndarray]:
        """
        ボックス中心 + Sobol 準乱数点 (+ ウォームスタート)
        """
        starts = [space.center.copy()]
        if opts.warm_start is not None:
            warm = np.asarray(opts.warm_start, dtype=float)
            if warm.shape != (space.n_params,):
                raise AppException(
                    error_code=ErrorCode.DIMENSION_MISMATCH,
                    message=f"Warm start has {warm.size} entries, space {space.name} needs {space.n_params}",
                )
            starts.append(np.clip(warm, space.lower, space.upper))

        n_random = opts.n_starts - 1
        if n_random > 0:
            sampler = qmc.Sobol(d=space.n_params, scramble=True, seed=stream(opts.seed, 0, PURPOSE_STARTS))
            m = int(np.ceil(np.log2(n_random)))
            points = qmc.scale(sampler.random_base2(m)[:n_random], space.lower, space.upper)
            starts.extend(points)
        return starts

    @staticmethod
    def _initial_simplex(x0: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
        offset = 0.05 * (upper - lower)
        simplex = np.tile(x0, (x0.size + 1, 1))
        for i in range(x0.size):
            step = offset[i] if x0[i] + offset[i] <= upper[i] else -offset[i]
            simplex[i + 1, i] += step
        return simplex

    @staticmethod
    def minimize_from(objective: Callable, x0: np.ndarray, lower: np.ndarray, upper: np.ndarray, opts: FitOptions) -> StartResult:
        res = minimize(
            objective,
            x0,
            method="Nelder-Mead",
            bounds=list(zip(lower, upper)),
            options={
                "maxfev": opts.max_evals,
                "xatol": opts.tol_simplex,
                "fatol": opts.tol_obj,
                "initial_simplex": QmleService._initial_simplex(x0, lower, upper),
                "adaptive": x0.size > 4,
            },
        )
        terminal = np.clip(res.x, lower, upper)
        return StartResult(
            initial=x0,
            terminal=terminal,
            objective=float(res.fun),
            n_evals=int(res.nfev),
            converged=bool(res.success),
        )

    @staticmethod
    def fit(space: ParameterSpace, sample: Sample, opts: Optional[FitOptions] = None) -> FitResult:
        """
        多点スタートの Nelder-Mead で L̂ を最小化し、θ̂ で Ĥ, Î, サンドイッチ共分散を推定する
        """
        opts = opts or FitOptions()
        if sample.n < 1:
            raise AppException(error_code=ErrorCode.INVALID_INPUT, message="Sample is empty")

        def objective(theta):
            return KalmanService.quasi_log_likelihood(space, theta, sample)

        results = []
        for idx, x0 in enumerate(QmleService.start_points(space, opts)):
            result = QmleService.minimize_from(objective, x0, space.lower, space.upper, opts)
            logger.debug(
                f"[{space.name}] start {idx}: objective={result.objective:.10g} "
                f"evals={result.n_evals} converged={result.converged}"
            )
            results.append(result)

        best = min(results, key=lambda r: (r.objective, tuple(r.terminal)))
        if best.objective >= settings.PENALTY_VALUE:
            raise AppException(
                error_code=ErrorCode.NO_FEASIBLE_POINT,
                message=f"Every start of space {space.name} ended on the penalty plateau",
                context={"start_objectives": [r.objective for r in results]}
            )

        diagnostics = {"starts": [
            {"initial": r.initial.tolist(), "objective": r.objective, "n_evals": r.n_evals, "converged": r.converged}
            for r in results
        ]}
        H_hat = I_hat = sandwich = None
        if opts.compute_covariance:
            diagnostics["hessian_one_sided"] = QmleService.one_sided_coordinates(
                best.terminal, space.lower, space.upper, opts.fd_step_scale
            )
            try:
                H_hat = QmleService.estimate_H(space, best.terminal, sample, opts.fd_step_scale)
                I_hat = QmleService.estimate_I(space, best.terminal, sample, opts.hac_lag_override, opts.fd_step_scale)
                sandwich = QmleService.sandwich_covariance(H_hat, I_hat)
            except AppException as e:
                logger.warning(f"[{space.name}] covariance estimation failed: {e}")
                diagnostics["covariance_error"] = e.to_dict()

        logger.info(f"[{space.name}] fit finished: objective={best.objective:.10g} n={sample.n}")
        return FitResult(
            space_name=space.name,
            n_obs=sample.n,
            n_params=space.n_params,
            theta_hat=best.terminal,
            objective=best.objective,
            H_hat=H_hat,
            I_hat=I_hat,
            sandwich=sandwich,
            converged=best.converged,
            n_evals=sum(r.n_evals for r in results),
            starts_used=len(results),
            start_objectives=[r.objective for r in results],
            diagnostics=diagnostics,
        )

    @staticmethod
    def _directions(theta, lower, upper, steps, reach: float) -> np.ndarray:
        """
        各座標で使う差分の向き: 0 = 中心差分、+1/-1 = 片側差分
        """
        room_up = upper - theta >= reach * steps
        room_down = theta - lower >= reach * steps
        return np.where(room_up & room_down, 0.0, np.where(room_up, 1.0, -1.0))

    @staticmethod
    def _hessian_steps(theta: np.ndarray, step_scale: float) -> np.ndarray:
        return np.cbrt(MACHINE_EPS) * np.maximum(1.0, np.abs(theta)) * step_scale

    @staticmethod
    def one_sided_coordinates(theta, lower, upper, step_scale: float = 1.0) -> list[int]:
        """
        ヘッセ行列の差分で片側差分になる座標
        """
        theta = np.asarray(theta, dtype=float)
        steps = QmleService._hessian_steps(theta, step_scale)
        directions = QmleService._directions(theta, np.asarray(lower, dtype=float), np.asarray(upper, dtype=float), steps, 2.0)
        return np.flatnonzero(directions != 0.0).tolist()

    @staticmethod
    def finite_difference_hessian(
        objective: Callable,
        theta,
        lower,
        upper,
        step_scale: float = 1.0,
        penalty: Optional[float] = None,
    ) -> np.ndarray:
        """
        step_i = cbrt(ε)·max(1, |θ_i|) の差分ヘッセ行列。境界近くの座標を含む行と列だけ片側差分、
        残りのブロックは中心差分。ペナルティ領域に入ったら刻みを半分にして最大6回やり直す
        """
        theta = np.asarray(theta, dtype=float)
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        penalty = settings.PENALTY_VALUE if penalty is None else penalty
        steps = QmleService._hessian_steps(theta, step_scale)

        for _ in range(MAX_STEP_HALVINGS + 1):
            tracked = _Tracked(objective, penalty)
            directions = QmleService._directions(theta, lower, upper, steps, 2.0)
            interior = np.flatnonzero(directions == 0.0)
            if interior.size == theta.size:
                H = approx_hess3(theta, tracked, epsilon=steps)
            else:
                signed = np.where(directions == 0.0, 1.0, directions) * steps
                H = np.array(approx_hess1(theta, tracked, epsilon=signed), dtype=float)
                if interior.size > 0:

                    def restricted(u):
                        point = theta.copy()
                        point[interior] = u
                        return tracked(point)

                    H[np.ix_(interior, interior)] = approx_hess3(theta[interior], restricted, epsilon=steps[interior])
            if not tracked.infeasible:
                return symmetrize(np.asarray(H, dtype=float))
            steps = steps / 2.0
        raise AppException(
            error_code=ErrorCode.STENCIL_INFEASIBLE,
            message="Hessian stencil stays in the penalty region after step halving",
            context={"theta": theta.tolist()}
        )

    @staticmethod
    def finite_difference_scores(
        per_step: Callable,
        theta,
        lower,
        upper,
        step_scale: float = 1.0,
    ) -> np.ndarray:
        """
        g_k = ∇_θ l_{θ,k} を (n, N(Θ)) 行列で返す。刻みは sqrt(ε)·max(1, |θ_i|)
        per_step は実行不能な θ で None を返す
        """
        theta = np.asarray(theta, dtype=float)
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        k = theta.size
        steps = np.sqrt(MACHINE_EPS) * np.maximum(1.0, np.abs(theta)) * step_scale

        for _ in range(MAX_STEP_HALVINGS + 1):
            tracked = _Tracked(per_step, np.inf)
            base = tracked(theta)
            if tracked.infeasible:
                break
            n = np.atleast_1d(base).size
            directions = QmleService._directions(theta, lower, upper, steps, 1.0)
            scores = np.empty((n, k))
            central = np.flatnonzero(directions == 0.0)
            one_sided = np.flatnonzero(directions != 0.0)
            for idx, centered in ((central, True), (one_sided, False)):
                if idx.size == 0:
                    continue

                def restricted(u, idx=idx):
                    point = theta.copy()
                    point[idx] = u
                    return tracked(point)

                # approx_fprime は centered=True のとき epsilon を半分にする
                eps = 2.0 * steps[idx] if centered else directions[idx] * steps[idx]
                J = approx_fprime(theta[idx], restricted, epsilon=eps, centered=centered)
                scores[:, idx] = np.asarray(J).reshape(n, idx.size)
            if not tracked.infeasible:
                return scores
            steps = steps / 2.0
        raise AppException(
            error_code=ErrorCode.STENCIL_INFEASIBLE,
            message="Score stencil stays in the penalty region after step halving",
            context={"theta": theta.tolist()}
        )

    @staticmethod
    def hac_lags(n: int, override: Optional[int] = None) -> int:
        return int(override) if override is not None else int(np.floor(n ** (1.0 / 3.0)))

    @staticmethod
    def newey_west_covariance(scores: np.ndarray, lags: Optional[int] = None) -> np.ndarray:
        """
        中心化したスコアの長期共分散 Γ_0 + Σ_j (1 - j/(J+1)) (Γ_j + Γ_j^T)
        """
        scores = np.asarray(scores, dtype=float)
        if scores.ndim == 1:
            scores = scores[:, None]
        n = scores.shape[0]
        if n < 2:
            raise AppException(error_code=ErrorCode.INVALID_INPUT, message="At least two score vectors are required")
        lags = QmleService.hac_lags(n) if lags is None else lags
        centered = scores - scores.mean(axis=0)
        return symmetrize(S_hac_simple(centered, nlags=min(lags, n - 1)) / n)

    @staticmethod
    def estimate_H(space: ParameterSpace, theta_hat, sample: Sample, step_scale: float = 1.0) -> np.ndarray:
        def objective(theta):
            return KalmanService.quasi_log_likelihood(space, theta, sample)

        return QmleService.finite_difference_hessian(objective, theta_hat, space.lower, space.upper, step_scale)

    @staticmethod
    def estimate_I(
        space: ParameterSpace,
        theta_hat,
        sample: Sample,
        lag_override: Optional[int] = None,
        step_scale: float = 1.0,
    ) -> np.ndarray:
        def per_step(theta):
            evaluation = KalmanService.evaluate(space, theta, sample)
            return evaluation.likelihood.per_step if evaluation.feasible else None

        scores = QmleService.finite_difference_scores(per_step, theta_hat, space.lower, space.upper, step_scale)
        return QmleService.newey_west_covariance(scores, QmleService.hac_lags(sample.n, lag_override))

    @staticmethod
    def sandwich_covariance(H_hat: np.ndarray, I_hat: np.ndarray) -> np.ndarray:
        """
        Ĥ^{-1} Î Ĥ^{-1}（√n(θ̂ - θ*) の漸近共分散）
        """
        H_hat = np.asarray(H_hat, dtype=float)
        cond = np.linalg.cond(H_hat)
        if not np.isfinite(cond) or cond >= SINGULAR_CONDITION:
            raise AppException(
                error_code=ErrorCode.SINGULAR_HESSIAN,
                message=f"Hessian condition number {cond:.3g} is too large",
            )
        H_inv = np.linalg.inv(H_hat)
        return symmetrize(H_inv @ np.asarray(I_hat, dtype=float) @ H_inv)
