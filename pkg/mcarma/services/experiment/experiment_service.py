from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence
import numpy as np
import pandas as pd
from tqdm import tqdm
from mcarma.core.config import settings
from mcarma.core.exceptions import AppException, ErrorCode
from mcarma.core.logging import get_logger
from mcarma.models.experiment import (
    ExperimentConfig,
    FitJobConfig,
    NestedPair,
    ReplicationOutcome,
    ReplicationSummary,
    SelectJobConfig,
    SpaceRef,
)
from mcarma.models.levy import Sample
from mcarma.models.model_core import ModelFile, ParameterSpace, SpaceConfig, StateSpaceModel
from mcarma.models.qmle import FitResult
from mcarma.models.selection import CriterionSpec, SelectionReport
from mcarma.services.kalman.kalman_service import KalmanService
from mcarma.services.levy.levy_service import LevyService
from mcarma.services.model_core.model_core_service import ModelCoreService
from mcarma.services.qmle.qmle_service import QmleService
from mcarma.services.selection.selection_service import SelectionService
from mcarma.utils.io import load_config, read_sample_csv, write_json, write_sample_csv, write_table
from mcarma.utils.rng import PURPOSE_SIMULATE, stream

logger = get_logger(__name__)

class ExperimentService:
    @staticmethod
    def resolve_space(ref: SpaceRef) -> ParameterSpace:
        if isinstance(ref, str):
            return ModelCoreService.study_space(ref)
        return ref.to_space()

    @staticmethod
    def load_spaces_dir(directory: Path) -> list[ParameterSpace]:
        """
        ディレクトリ内の *.json（SpaceConfig）をファイル名順に読む
        """
        directory = Path(directory)
        if not directory.is_dir():
            raise AppException(error_code=ErrorCode.IO_ERROR, message=f"Spaces directory not found: {directory}")
        spaces = []
        for path in sorted(directory.glob("*.json")):
            spaces.append(load_config(path, SpaceConfig).to_space())
        if not spaces:
            raise AppException(error_code=ErrorCode.INVALID_INPUT, message=f"No space files in {directory}")
        return spaces

    @staticmethod
    def true_model(config: ExperimentConfig) -> tuple[ParameterSpace, np.ndarray, StateSpaceModel]:
        space = ExperimentService.resolve_space(config.true_model.space)
        sigma_L = LevyService.driver_moments(config.true_model.driver).cov
        theta = space.theta_from(config.true_model.theta, sigma_L)
        model = ModelCoreService.echelon_model(space, theta)
        if config.true_model.driver.dim != model.s:
            raise AppException(
                error_code=ErrorCode.DIMENSION_MISMATCH,
                message=f"Driver dimension {config.true_model.driver.dim} does not match space {space.name}",
            )
        return space, theta, model

    @staticmethod
    def simulate_replication(config: ExperimentConfig, replication: int, model: Optional[StateSpaceModel] = None) -> Sample:
        """
        (master_seed, replication) だけで決まる乱数列で 1 本の標本を生成する
        """
        if model is None:
            _, _, model = ExperimentService.true_model(config)
        rng = stream(config.master_seed, replication, PURPOSE_SIMULATE)
        return LevyService.simulate_sample(
            model,
            config.true_model.driver,
            n=config.n,
            h=config.h,
            step=config.euler_step,
            rng=rng,
            burn_in=config.burn_in,
        )

    @staticmethod
    def cmd_simulate(config: ExperimentConfig, out_dir: Path) -> list[Path]:
        out_dir = Path(out_dir)
        _, _, model = ExperimentService.true_model(config)
        paths = []
        for r in tqdm(range(config.replications), desc="simulate", disable=config.replications < 2):
            sample = ExperimentService.simulate_replication(config, r, model)
            paths.append(write_sample_csv(out_dir / f"sample_{r:04d}.csv", sample))
        logger.info(f"Wrote {len(paths)} sample file(s) to {out_dir}")
        return paths

    @staticmethod
    def filter_dump(space: ParameterSpace, theta: np.ndarray, h: float) -> dict:
        model = ModelCoreService.echelon_model(space, theta)
        return KalmanService.discretize(model, h).to_dict()

    @staticmethod
    def cmd_fit(job: FitJobConfig, data_path: Path, out_dir: Path, dump_filter: bool = False) -> FitResult:
        sample = read_sample_csv(data_path, job.h)
        space = ExperimentService.resolve_space(job.space)
        if sample.d != space.d:
            raise AppException(
                error_code=ErrorCode.DIMENSION_MISMATCH,
                message=f"Data has {sample.d} columns but space {space.name} has output dimension {space.d}",
            )
        result = QmleService.fit(space, sample, job.fit)
        out_dir = Path(out_dir)
        write_json(out_dir / "fit.json", {**result.to_dict(), "space": space.describe(), "data": str(data_path)})
        write_json(out_dir / "model.json", ModelFile.from_theta(space, result.theta_hat).model_dump())
        if dump_filter:
            write_json(out_dir / "filter.json", ExperimentService.filter_dump(space, result.theta_hat, sample.h))
        return result

    @staticmethod
    def selection_table(report: SelectionReport) -> pd.DataFrame:
        rows = []
        for score in report.per_space:
            row = {"space": score.space_name, "m": " ".join(str(v) for v in score.m), "q": score.q, "n_params": score.n_params}
            for criterion in report.criteria:
                row[criterion] = score.values[criterion]
            row["chosen_by"] = " ".join(c for c in report.criteria if report.chosen[c] == score.space_name)
            rows.append(row)
        return pd.DataFrame(rows)

    @staticmethod
    def attach_overfit(
        report: SelectionReport,
        fits: dict[str, FitResult],
        spaces: Sequence[ParameterSpace],
        criteria: Sequence[CriterionSpec],
        pair: NestedPair,
    ) -> SelectionReport:
        by_name = {s.name: s for s in spaces}
        if pair.inner not in by_name or pair.outer not in by_name:
            raise AppException(error_code=ErrorCode.INVALID_INPUT, message=f"Nested pair {pair.inner}/{pair.outer} not among candidates")
        if pair.inner not in fits or pair.outer not in fits:
            logger.warning("Overfit report skipped: a nested-pair fit failed")
            return report
        spec = next((c for c in criteria if c.name == pair.criterion), None)
        if spec is None:
            raise AppException(error_code=ErrorCode.INVALID_INPUT, message=f"Nested-pair criterion {pair.criterion} is not among the criteria")
        F = ModelCoreService.nesting_map(by_name[pair.inner], by_name[pair.outer])
        try:
            overfit = SelectionService.overfit_report(fits[pair.inner], fits[pair.outer], F, spec)
        except AppException as e:
            logger.warning(f"Overfit report skipped: {e}")
            return report
        return report.model_copy(update={"overfit": overfit})

    @staticmethod
    def cmd_select(job: SelectJobConfig, data_path: Path, out_dir: Path, spaces_dir: Optional[Path] = None) -> SelectionReport:
        sample = read_sample_csv(data_path, job.h)
        spaces = (
            [ExperimentService.resolve_space(ref) for ref in job.spaces]
            if job.spaces else ExperimentService.load_spaces_dir(spaces_dir)
        )
        mismatched = [s.name for s in spaces if s.d != sample.d]
        if mismatched:
            raise AppException(
                error_code=ErrorCode.DIMENSION_MISMATCH,
                message=f"Spaces {mismatched} do not match the data dimension {sample.d}",
            )
        report, fits = SelectionService.select(spaces, sample, job.criteria, job.fit)
        if job.nested_pair is not None:
            report = ExperimentService.attach_overfit(report, fits, spaces, job.criteria, job.nested_pair)

        out_dir = Path(out_dir)
        write_json(out_dir / "selection.json", report.to_dict())
        write_table(out_dir / "selection.csv", ExperimentService.selection_table(report))
        return report

    @staticmethod
    def counts_table(summary: ReplicationSummary) -> pd.DataFrame:
        """
        行 = 候補空間（最後に failures 行）、列 = 規準ごとの選択回数
        """
        rows = []
        for space in summary.spaces:
            row = dict(space)
            for criterion in summary.criteria:
                row[criterion] = summary.counts[criterion][space["space"]]
            rows.append(row)
        failure_row = {"space": "failures", "m": "", "p": "", "q": "", "n_params": ""}
        failure_row.update({criterion: summary.failures for criterion in summary.criteria})
        rows.append(failure_row)
        return pd.DataFrame(rows)

    @staticmethod
    def summarize(config: ExperimentConfig, outcomes: Sequence[ReplicationOutcome]) -> ReplicationSummary:
        spaces = [ExperimentService.resolve_space(ref) for ref in config.candidate_spaces]
        criteria = [c.name for c in config.criteria]
        counts = {c: {s.name: 0 for s in spaces} for c in criteria}
        ok = [o for o in outcomes if o.error is None]
        for outcome in ok:
            for criterion, name in outcome.chosen.items():
                counts[criterion][name] += 1

        summary = ReplicationSummary(
            replications=len(outcomes),
            failures=len(outcomes) - len(ok),
            criteria=criteria,
            spaces=[
                {"space": s.name, "m": " ".join(map(str, s.kronecker.m)), "p": s.kronecker.p, "q": s.ma_cap, "n_params": s.n_params}
                for s in spaces
            ],
            counts=counts,
        )
        if config.nested_pair is None:
            return summary

        # 平均した Ĥ, Î から理論上の過適合確率、選択結果から経験的な過適合率を求める
        pair = config.nested_pair
        with_matrices = [o for o in ok if o.H_outer is not None and o.I_outer is not None]
        flags = [o.overfit for o in ok if o.overfit is not None]
        by_name = {s.name: s for s in spaces}
        try:
            if not with_matrices:
                raise AppException(error_code=ErrorCode.SINGULAR_HESSIAN, message="No replication produced H/I for the outer space")
            F = ModelCoreService.nesting_map(by_name[pair.inner], by_name[pair.outer])
            H = np.mean([o.H_outer for o in with_matrices], axis=0)
            I = np.mean([o.I_outer for o in with_matrices], axis=0)
            spec = next((c for c in config.criteria if c.name == pair.criterion), None)
            if spec is None:
                raise AppException(error_code=ErrorCode.INVALID_INPUT, message=f"Nested-pair criterion {pair.criterion} is not among the criteria")
            C = spec.penalty_constant(config.n)
            spectrum = SelectionService.overfit_spectrum(H, I, F)
            report = SelectionService.overfit_report_from_spectrum(
                spectrum, F, 2.0 if C is None else C, pair.inner, pair.outer, pair.criterion
            )
            report = report.model_copy(update={
                "empirical_rate": float(np.mean(flags)) if flags else None,
                "replications": len(flags),
            })
            logger.info(
                f"Overfit {pair.inner}->{pair.outer} ({pair.criterion}): "
                f"theoretical={report.probability:.4f} simplified={report.simplified_probability:.4f} "
                f"empirical={report.empirical_rate}"
            )
            return summary.model_copy(update={"overfit": report})
        except AppException as e:
            logger.warning(f"Overfit report unavailable: {e}")
            return summary.model_copy(update={"overfit_error": e.to_dict()})

    @staticmethod
    def cmd_replicate(config: ExperimentConfig, out_dir: Path, threads: Optional[int] = None) -> ReplicationSummary:
        """
        反復ごとに独立な乱数列で simulate + select を並列実行し、選択回数表を集計する
        """
        threads = threads or config.threads or settings.DEFAULT_THREADS
        ExperimentService.true_model(config)
        indices = range(config.replications)

        if threads > 1:
            with ProcessPoolExecutor(max_workers=threads) as executor:
                outcomes = list(tqdm(
                    executor.map(run_replication, [config] * config.replications, indices),
                    total=config.replications,
                    desc="replicate",
                ))
        else:
            outcomes = [run_replication(config, r) for r in tqdm(indices, desc="replicate")]

        summary = ExperimentService.summarize(config, outcomes)
        out_dir = Path(out_dir)
        write_table(out_dir / "counts.csv", ExperimentService.counts_table(summary))
        write_json(out_dir / "counts.json", summary.to_dict())
        write_json(out_dir / "replications.json", {"replications": [o.model_dump(mode="json") for o in outcomes]})
        logger.info(f"Replication finished: {summary.replications - summary.failures}/{summary.replications} succeeded")

        if summary.failures:
            raise AppException(
                error_code=ErrorCode.PARTIAL_REPLICATION_FAILURE,
                message=f"{summary.failures} of {summary.replications} replications failed",
                context={"failed": [o.replication for o in outcomes if o.error is not None]}
            )
        return summary


def run_replication(config: ExperimentConfig, replication: int) -> ReplicationOutcome:
    """
    ワーカープロセスで実行する 1 回分の反復（例外は結果に記録して返す）
    """
    try:
        sample = ExperimentService.simulate_replication(config, replication)
        spaces = [ExperimentService.resolve_space(ref) for ref in config.candidate_spaces]
        report, fits = SelectionService.select(spaces, sample, config.criteria, config.fit)
        outcome = ReplicationOutcome(
            replication=replication,
            chosen=report.chosen,
            values={s.space_name: s.values for s in report.per_space},
        )
        pair = config.nested_pair
        if pair is not None:
            values = outcome.values
            outcome.overfit = bool(values[pair.outer][pair.criterion] < values[pair.inner][pair.criterion])
            outer = fits.get(pair.outer)
            if outer is not None and outer.H_hat is not None and outer.I_hat is not None:
                outcome.H_outer = outer.H_hat.tolist()
                outcome.I_outer = outer.I_hat.tolist()
        return outcome
    except AppException as e:
        logger.warning(f"Replication {replication} failed: {e}")
        return ReplicationOutcome(replication=replication, error=e.to_dict())
    except Exception as e:
        logger.warning(f"Replication {replication} failed unexpectedly: {e}")
        return ReplicationOutcome(
            replication=replication,
            error={"error_code": ErrorCode.INTERNAL_ERROR.name, "error_message": str(e)},
        )
