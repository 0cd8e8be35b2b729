from pathlib import Path
from typing import Optional
import click
from mcarma.cli.common import config_option, out_option, output_dir, seed_option
from mcarma.core.logging import get_logger
from mcarma.models.experiment import ExperimentConfig
from mcarma.services.experiment.experiment_service import ExperimentService
from mcarma.utils.decorators import catch_exceptions
from mcarma.utils.io import load_config

logger = get_logger(__name__)

@click.command("replicate")
@config_option
@out_option
@seed_option
@click.option("--threads", type=click.IntRange(min=1), default=None, help="Number of worker processes")
@catch_exceptions
def replicate(config_path: Path, out_dir: Optional[Path], seed: Optional[int], threads: Optional[int]):
    """
    シミュレーションとモデル選択を反復し、選択回数表を集計する
    """
    config = load_config(config_path, ExperimentConfig)
    if seed is not None:
        config = config.model_copy(update={"master_seed": seed})
    out = output_dir(out_dir, config_path, config.output_dir)
    logger.info(f"Running {config.replications} replication(s) into {out}")
    summary = ExperimentService.cmd_replicate(config, out, threads)
    click.echo(ExperimentService.counts_table(summary).to_string(index=False))
    if summary.overfit is not None:
        report = summary.overfit
        click.echo(
            f"overfit {report.inner}->{report.outer} ({report.criterion}): "
            f"theoretical={report.probability:.4f} simplified={report.simplified_probability:.4f} "
            f"empirical={report.empirical_rate}"
        )
