from pathlib import Path
from typing import Optional
import click
from mcarma.core.config import settings
from mcarma.utils.io import resolve_path

config_option = click.option(
    "--config",
    "config_path",
    required=True,
    type=click.Path(path_type=Path, dir_okay=False),
    help="JSON config file",
)
out_option = click.option(
    "--out",
    "out_dir",
    type=click.Path(path_type=Path, file_okay=False),
    default=None,
    help="Output directory",
)
seed_option = click.option("--seed", type=click.IntRange(min=0), default=None, help="Override the seed in the config")

def output_dir(out_dir: Optional[Path], config_path: Path, configured: Optional[str] = None) -> Path:
    """
    --out > 設定ファイルの output_dir > DEFAULT_OUTPUT_DIR の順に決める
    """
    if out_dir is not None:
        return Path(out_dir)
    if configured:
        return resolve_path(config_path, configured)
    return Path(settings.DEFAULT_OUTPUT_DIR)
