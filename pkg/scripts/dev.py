import os
import sys

# プロジェクトルートのパスを追加
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from mcarma.main import cli

if __name__ == "__main__":
    # 開発用: 常に DEBUG ログで CLI を起動する
    # 例) python scripts/dev.py replicate --config configs/study_table1.json --threads 4
    cli(["--verbose", *sys.argv[1:]], prog_name="mcarma")
