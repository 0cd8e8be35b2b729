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

@click.command("simulate")
@config_option
@out_option
@seed_option
@catch_exceptions
def simulate(config_path: Path, out_dir: Optional[Path], seed: Optional[int]):
    """
    真のモデルから反復ごとに CSV 標本を生成する
    """
    config = load_config(config_path, ExperimentConfig)
    if seed is not None:
        config = config.model_copy(update={"master_seed": seed})
    out = output_dir(out_dir, config_path, config.output_dir)
    logger.info(f"Simulating {config.replications} sample(s) into {out}")
    paths = ExperimentService.cmd_simulate(config, out)
    for path in paths:
        click.echo(str(path))
