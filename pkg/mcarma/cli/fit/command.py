from pathlib import Path
from typing import Optional
import click
from mcarma.cli.common import config_option, out_option, output_dir, seed_option
from mcarma.core.logging import get_logger
from mcarma.models.experiment import FitJobConfig
from mcarma.services.experiment.experiment_service import ExperimentService
from mcarma.utils.decorators import catch_exceptions
from mcarma.utils.io import load_config, resolve_path

logger = get_logger(__name__)

@click.command("fit")
@config_option
@out_option
@seed_option
@click.option("--dump-filter", is_flag=True, help="Also write the steady-state filter at the estimate")
@catch_exceptions
def fit(config_path: Path, out_dir: Optional[Path], seed: Optional[int], dump_filter: bool):
    """
    1つのパラメータ空間で QMLE を行い fit.json を書き出す
    """
    job = load_config(config_path, FitJobConfig)
    if seed is not None:
        job = job.model_copy(update={"fit": job.fit.model_copy(update={"seed": seed})})
    out = output_dir(out_dir, config_path)
    result = ExperimentService.cmd_fit(job, resolve_path(config_path, job.data), out, dump_filter)
    click.echo(
        f"space={result.space_name} n={result.n_obs} objective={result.objective:.10g} "
        f"converged={str(result.converged).lower()}"
    )
