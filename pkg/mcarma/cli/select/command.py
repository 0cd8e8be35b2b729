from pathlib import Path
from typing import Optional
import click
from mcarma.cli.common import config_option, out_option, output_dir, seed_option
from mcarma.core.logging import get_logger
from mcarma.models.experiment import SelectJobConfig
from mcarma.services.experiment.experiment_service import ExperimentService
from mcarma.utils.decorators import catch_exceptions
from mcarma.utils.io import load_config, resolve_path

logger = get_logger(__name__)

@click.command("select")
@config_option
@out_option
@seed_option
@catch_exceptions
def select(config_path: Path, out_dir: Optional[Path], seed: Optional[int]):
    """
    候補空間をすべて推定し、情報量規準ごとに空間を選ぶ
    """
    job = load_config(config_path, SelectJobConfig)
    if seed is not None:
        job = job.model_copy(update={"fit": job.fit.model_copy(update={"seed": seed})})
    spaces_dir = resolve_path(config_path, job.spaces_dir) if job.spaces_dir else None
    out = output_dir(out_dir, config_path)
    report = ExperimentService.cmd_select(job, resolve_path(config_path, job.data), out, spaces_dir)
    click.echo(ExperimentService.selection_table(report).to_string(index=False))
