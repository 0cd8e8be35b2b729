import zlib
import numpy as np

# 用途タグ（固定値にしておくことで、スケジューリングに依存しない乱数列を保証する）
PURPOSE_SIMULATE = "simulate"
PURPOSE_STARTS = "starts"
PURPOSE_ORACLE = "oracle"

def purpose_code(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))

def stream(master_seed: int, replication: int = 0, purpose: str = PURPOSE_SIMULATE) -> np.random.Generator:
    """
    (master seed, replication index, purpose tag) をキーとするカウンタ型乱数列を返す
    """
    seq = np.random.SeedSequence(
        entropy=int(master_seed),
        spawn_key=(int(replication), purpose_code(purpose)),
    )
    return np.random.Generator(np.random.Philox(seq))
