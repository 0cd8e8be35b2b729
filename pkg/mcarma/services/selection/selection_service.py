from typing import Optional, Sequence, Union
import numpy as np
from scipy.integrate import quad
from scipy.stats import chi2
from mcarma.core.exceptions import AppException, ErrorCode
from mcarma.core.logging import get_logger
from mcarma.models.levy import Sample
from mcarma.models.model_core import NestingMap, ParameterSpace
from mcarma.models.qmle import FitOptions, FitResult
from mcarma.models.selection import (
    CriterionKind,
    CriterionSpec,
    CriterionValue,
    OverfitReport,
    OverfitSpectrum,
    SelectionReport,
    SpaceScore,
)
from mcarma.services.qmle.qmle_service import SINGULAR_CONDITION, QmleService
from mcarma.utils.linalg import psd_sqrt, symmetrize
from mcarma.utils.rng import PURPOSE_ORACLE, stream

logger = get_logger(__name__)

TIE_TOLERANCE = 1e-12
EIGENVALUE_THRESHOLD = 1e-8
QUAD_TOL = 1e-8
MC_CHUNK = 100_000

class SelectionService:
    @staticmethod
    def criterion_value(
        fit: FitResult,
        spec: CriterionSpec,
        n: Optional[int] = None,
        n_params: Optional[int] = None,
    ) -> CriterionValue:
        """
        IC_n = L̂(θ̂) + penalty / n。AIC の penalty は tr(Î Ĥ^{-1})、それ以外は N(Θ)·C(n)
        """
        n = fit.n_obs if n is None else n
        n_params = fit.n_params if n_params is None else n_params
        if n < 1:
            raise AppException(error_code=ErrorCode.INVALID_INPUT, message=f"Sample size must be positive, got {n}")

        if spec.kind == CriterionKind.AIC:
            penalty = SelectionService._aic_penalty(fit)
            if penalty is None:
                logger.warning(f"[{fit.space_name}] AIC penalty unavailable, falling back to CAIC")
                return CriterionValue(value=fit.objective + 2.0 * n_params / n, penalty=2.0 * n_params, degraded=True)
            return CriterionValue(value=fit.objective + penalty / n, penalty=penalty)

        penalty = n_params * spec.penalty_constant(n)
        return CriterionValue(value=fit.objective + penalty / n, penalty=penalty)

    @staticmethod
    def _aic_penalty(fit: FitResult) -> Optional[float]:
        if fit.H_hat is None or fit.I_hat is None:
            return None
        cond = np.linalg.cond(fit.H_hat)
        if not np.isfinite(cond) or cond >= SINGULAR_CONDITION:
            return None
        return float(np.trace(np.linalg.solve(fit.H_hat, fit.I_hat)))

    @staticmethod
    def ic_value(fit: FitResult, n: int, n_params: int, spec: CriterionSpec) -> float:
        return SelectionService.criterion_value(fit, spec, n, n_params).value

    @staticmethod
    def score_space(space: ParameterSpace, fit: Optional[FitResult], criteria: Sequence[CriterionSpec], error: Optional[dict] = None) -> SpaceScore:
        score = SpaceScore(
            space_name=space.name,
            n_params=space.n_params,
            m=list(space.kronecker.m),
            q=space.ma_cap,
            error=error,
        )
        if fit is None:
            score.values = {spec.name: float("inf") for spec in criteria}
            return score
        score.objective = fit.objective
        score.theta_hat = fit.theta_hat.tolist()
        for spec in criteria:
            cv = SelectionService.criterion_value(fit, spec)
            score.values[spec.name] = cv.value
            score.penalties[spec.name] = cv.penalty
            score.degraded[spec.name] = cv.degraded
        return score

    @staticmethod
    def choose(scores: Sequence[SpaceScore], criterion: str) -> str:
        """
        最小値を選ぶ。1e-12 以内の同点は N(Θ) の小さい方、次に入力順
        """
        values = [s.values[criterion] for s in scores]
        best = min(values)
        if not np.isfinite(best):
            raise AppException(
                error_code=ErrorCode.NO_FEASIBLE_POINT,
                message=f"No candidate space could be fitted for criterion {criterion}",
            )
        tied = [idx for idx, v in enumerate(values) if v <= best + TIE_TOLERANCE]
        winner = min(tied, key=lambda idx: (scores[idx].n_params, idx))
        return scores[winner].space_name

    @staticmethod
    def select(
        spaces: Sequence[ParameterSpace],
        sample: Sample,
        spec: Union[CriterionSpec, Sequence[CriterionSpec]],
        opts: Optional[FitOptions] = None,
        fits: Optional[dict[str, FitResult]] = None,
    ) -> tuple[SelectionReport, dict[str, FitResult]]:
        """
        全候補空間を推定し、規準ごとに最小の空間を選ぶ。推定に失敗した空間は +∞ として残す
        """
        if not spaces:
            raise AppException(error_code=ErrorCode.INVALID_INPUT, message="At least one candidate space is required")
        names = [s.name for s in spaces]
        if len(set(names)) != len(names):
            raise AppException(error_code=ErrorCode.INVALID_INPUT, message=f"Duplicate space names: {names}")
        criteria = [spec] if isinstance(spec, CriterionSpec) else list(spec)
        if not criteria:
            raise AppException(error_code=ErrorCode.INVALID_INPUT, message="At least one criterion is required")

        fits = dict(fits or {})
        scores = []
        for space in spaces:
            error = None
            if space.name not in fits:
                try:
                    fits[space.name] = QmleService.fit(space, sample, opts)
                except AppException as e:
                    logger.warning(f"[{space.name}] fit failed: {e}")
                    error = e.to_dict()
            scores.append(SelectionService.score_space(space, fits.get(space.name), criteria, error))

        chosen = {c.name: SelectionService.choose(scores, c.name) for c in criteria}
        logger.info(f"Selected spaces: {chosen}")
        report = SelectionReport(per_space=scores, criteria=[c.name for c in criteria], chosen=chosen)
        return report, fits

    @staticmethod
    def overfit_spectrum(H: np.ndarray, I: np.ndarray, F: NestingMap) -> OverfitSpectrum:
        """
        M = -H^{-1} + F(F^T H F)^{-1} F^T、W = H^{1/2} M I M H^{1/2} の固有値
        """
        H = symmetrize(np.asarray(H, dtype=float))
        I = symmetrize(np.asarray(I, dtype=float))
        if H.shape != (F.n_outer, F.n_outer) or I.shape != H.shape:
            raise AppException(
                error_code=ErrorCode.DIMENSION_MISMATCH,
                message=f"H and I must be {F.n_outer}x{F.n_outer}",
            )
        eig_H = np.linalg.eigvalsh(H)
        if eig_H[0] <= 0.0 or eig_H[-1] / eig_H[0] >= SINGULAR_CONDITION:
            raise AppException(
                error_code=ErrorCode.SINGULAR_HESSIAN,
                message="H must be positive definite and well conditioned",
                context={"eigenvalues": eig_H.tolist()}
            )

        Fm = F.F
        M = -np.linalg.inv(H) + Fm @ np.linalg.solve(Fm.T @ H @ Fm, Fm.T)
        root = psd_sqrt(H)
        spectrum = np.linalg.eigvalsh(symmetrize(root @ M @ I @ M @ root))[::-1]

        inv_root = np.linalg.inv(root)
        ratio_max = float(np.max(np.linalg.eigvalsh(symmetrize(inv_root @ I @ inv_root))))

        top = spectrum[0]
        positive = spectrum[spectrum > EIGENVALUE_THRESHOLD * top] if top > 0.0 else spectrum[:0]
        expected = F.n_outer - F.n_inner
        if positive.size != expected:
            raise AppException(
                error_code=ErrorCode.RANK_ANOMALY,
                message=f"Expected {expected} positive eigenvalues, found {positive.size}",
                context={"spectrum": spectrum.tolist()}
            )
        return OverfitSpectrum(eigenvalues=positive, spectrum=spectrum, information_ratio_max=ratio_max)

    @staticmethod
    def overfit_eigenvalues(fit0: FitResult, fitE: FitResult, F: NestingMap) -> OverfitSpectrum:
        if fit0.n_params != F.n_inner or fitE.n_params != F.n_outer:
            raise AppException(
                error_code=ErrorCode.DIMENSION_MISMATCH,
                message="Nesting map does not match the fitted spaces",
                context={"inner": fit0.space_name, "outer": fitE.space_name}
            )
        if fitE.H_hat is None or fitE.I_hat is None:
            raise AppException(
                error_code=ErrorCode.SINGULAR_HESSIAN,
                message=f"Fit of {fitE.space_name} has no H/I estimates",
            )
        return SelectionService.overfit_spectrum(fitE.H_hat, fitE.I_hat, F)

    @staticmethod
    def _check_weights(weights) -> np.ndarray:
        lam = np.asarray(weights, dtype=float).ravel()
        if lam.size == 0:
            raise AppException(error_code=ErrorCode.INVALID_INPUT, message="Weight list must not be empty")
        if np.any(lam <= 0.0) or not np.all(np.isfinite(lam)):
            raise AppException(error_code=ErrorCode.INVALID_INPUT, message="Weights must be positive and finite")
        return lam

    @staticmethod
    def weighted_chisq_tail(weights, t: float) -> float:
        """
        P(Σ λ_i χ²_i > t) を特性関数の反転で求める
        P = 1/2 + (1/π) ∫_0^∞ sin θ(u) / (u ρ(u)) du,
        θ(u) = Σ arctan(λ_i u)/2 - t u/2,  ρ(u) = Π (1 + λ_i² u²)^{1/4}
        """
        lam = SelectionService._check_weights(weights)
        if t <= 0.0:
            return 1.0

        def phi(u):
            return 0.5 * np.sum(np.arctan(lam * u))

        def rho_u(u):
            return u * np.prod((1.0 + (lam * u) ** 2) ** 0.25)

        def integrand(u):
            if u == 0.0:
                return 0.5 * (np.sum(lam) - t)
            return np.sin(phi(u) - 0.5 * t * u) / rho_u(u)

        head, _ = quad(integrand, 0.0, 1.0, epsabs=QUAD_TOL, limit=200)
        # [1, ∞) は sin(φ - ωu) = sin φ cos ωu - cos φ sin ωu に分けてフーリエ型求積
        omega = 0.5 * t
        tail_cos, _ = quad(lambda u: np.sin(phi(u)) / rho_u(u), 1.0, np.inf, weight="cos", wvar=omega, epsabs=QUAD_TOL)
        tail_sin, _ = quad(lambda u: np.cos(phi(u)) / rho_u(u), 1.0, np.inf, weight="sin", wvar=omega, epsabs=QUAD_TOL)
        probability = 0.5 + (head + tail_cos - tail_sin) / np.pi
        return float(np.clip(probability, 0.0, 1.0))

    @staticmethod
    def weighted_chisq_tail_mc(
        weights,
        t: float,
        draws: int = 1_000_000,
        rng: Optional[np.random.Generator] = None,
    ) -> tuple[float, float]:
        """
        モンテカルロによる P(Σ λ_i χ²_i > t) と標準誤差
        """
        lam = SelectionService._check_weights(weights)
        rng = rng or stream(0, 0, PURPOSE_ORACLE)
        hits = 0
        remaining = draws
        while remaining > 0:
            size = min(MC_CHUNK, remaining)
            hits += int(np.sum(rng.chisquare(1.0, size=(size, lam.size)) @ lam > t))
            remaining -= size
        p = hits / draws
        return p, float(np.sqrt(p * (1.0 - p) / draws))

    @staticmethod
    def overfitting_probability(fit0: FitResult, fitE: FitResult, F: NestingMap, C: float) -> float:
        """
        lim P(IC_n(Θ₀) > IC_n(Θ)) = P(Σ λ_i χ²_i > 2 [N(Θ) - N(Θ₀)] C)
        """
        spectrum = SelectionService.overfit_eigenvalues(fit0, fitE, F)
        return SelectionService.weighted_chisq_tail(spectrum.eigenvalues, 2.0 * (F.n_outer - F.n_inner) * C)

    @staticmethod
    def overfit_report_from_spectrum(
        spectrum: OverfitSpectrum,
        F: NestingMap,
        C: float,
        inner: str,
        outer: str,
        criterion: str,
    ) -> OverfitReport:
        """
        加重χ²の裾確率に加えて、固有値和で割った閾値での P(χ²₁ > 2kC/Σλ) も報告する
        """
        lam = spectrum.eigenvalues
        threshold = 2.0 * (F.n_outer - F.n_inner) * C
        return OverfitReport(
            inner=inner,
            outer=outer,
            criterion=criterion,
            C=C,
            eigenvalues=lam.tolist(),
            threshold=threshold,
            probability=SelectionService.weighted_chisq_tail(lam, threshold),
            simplified_probability=float(chi2.sf(threshold / np.sum(lam), df=1)),
            information_ratio_max=spectrum.information_ratio_max,
        )

    @staticmethod
    def overfit_report(fit0: FitResult, fitE: FitResult, F: NestingMap, spec: CriterionSpec) -> OverfitReport:
        C = spec.penalty_constant(fit0.n_obs)
        if C is None:
            # AIC の漸近的な C は CAIC と同じ 2
            C = 2.0
        spectrum = SelectionService.overfit_eigenvalues(fit0, fitE, F)
        return SelectionService.overfit_report_from_spectrum(spectrum, F, C, fit0.space_name, fitE.space_name, spec.name)
