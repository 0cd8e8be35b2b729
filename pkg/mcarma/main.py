import click
from dotenv import load_dotenv
from mcarma.cli.fit.command import fit
from mcarma.cli.replicate.command import replicate
from mcarma.cli.select.command import select
from mcarma.cli.simulate.command import simulate
from mcarma.core.logging import get_logger, set_up_logging

# .envファイルを読み込む
load_dotenv()

logger = get_logger(__name__)

@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log at DEBUG level")
def cli(verbose: bool):
    """
    MCARMA のシミュレーション・QMLE・情報量規準によるモデル選択
    """
    # ロギングの設定
    set_up_logging(verbose)

# コマンドの登録
cli.add_command(simulate)
cli.add_command(fit)
cli.add_command(select)
cli.add_command(replicate)
