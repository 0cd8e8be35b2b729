from enum import Enum
from typing import Optional, Dict, Any
from mcarma.core.logging import get_logger, log_exception

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_INVALID_INPUT = 2
EXIT_NUMERIC_FAILURE = 3
EXIT_PARTIAL_FAILURE = 4

class ErrorCode(Enum):
    """
    エラーコードとデフォルトの設定（メッセージと終了コード）を定義
    """
    # 入力検証関連
    INVALID_INPUT = ("Invalid input", EXIT_INVALID_INPUT)
    INVALID_PARAMETER = ("Invalid parameter value", EXIT_INVALID_INPUT)
    MALFORMED_DATA = ("Malformed data", EXIT_INVALID_INPUT)
    DIMENSION_MISMATCH = ("Dimension mismatch", EXIT_INVALID_INPUT)
    NOT_NESTED = ("Parameter spaces are not nested", EXIT_INVALID_INPUT)
    UNSUPPORTED = ("Unsupported operation", EXIT_INVALID_INPUT)
    CONFIG_ERROR = ("Configuration error", EXIT_INVALID_INPUT)
    IO_ERROR = ("File operation failed", EXIT_INVALID_INPUT)

    # 数値計算関連
    SINGULAR_INNOVATION = ("Innovation covariance is numerically singular", EXIT_NUMERIC_FAILURE)
    RICCATI_DIVERGENCE = ("Riccati iteration did not converge", EXIT_NUMERIC_FAILURE)
    NO_FEASIBLE_POINT = ("No feasible parameter found", EXIT_NUMERIC_FAILURE)
    STENCIL_INFEASIBLE = ("Finite-difference stencil left the feasible region", EXIT_NUMERIC_FAILURE)
    SINGULAR_HESSIAN = ("Hessian estimate is singular", EXIT_NUMERIC_FAILURE)
    RANK_ANOMALY = ("Unexpected number of positive eigenvalues", EXIT_NUMERIC_FAILURE)
    NUMERIC_FAILURE = ("Numerical failure", EXIT_NUMERIC_FAILURE)

    # 反復実験関連
    PARTIAL_REPLICATION_FAILURE = ("Some replications failed", EXIT_PARTIAL_FAILURE)

    # システムエラー
    INTERNAL_ERROR = ("Internal error", EXIT_NUMERIC_FAILURE)

    def __init__(self, default_message: str, exit_code: int):
        self.default_message = default_message
        self.exit_code = exit_code

class AppException(Exception):
    """
    アプリケーション共通の例外クラス
    """
    def __init__(
        self,
        error_code: ErrorCode,
        message: Optional[str] = None,
        exit_code: Optional[int] = None,
        context: Optional[Dict[str, Any]] = None
    ):
        self.error_code = error_code
        self.message = message or error_code.default_message
        self.exit_code = exit_code or error_code.exit_code
        self.context = context or {}
        super().__init__(self.message)

    def __str__(self):
        return f"[{self.error_code}] {self.message}"

    def to_dict(self) -> Dict[str, Any]:
        """
        例外情報を辞書形式で返す
        """
        return {
            "error_code": self.error_code.name,
            "error_message": self.message,
            "exit_code": self.exit_code,
            "details": self.context if self.context else None
        }

def handle_app_exception(e: AppException) -> int:
    """
    発生した例外をログ出力し、終了コードを返す
    """
    log_exception(
        logger,
        e,
        context={
            "error_code": e.error_code.name,
            "exit_code": e.exit_code,
            "context": e.context
        }
    )
    return e.exit_code

def handle_unexpected_exception(e: Exception) -> int:
    """
    予期しない例外を処理する
    """
    log_exception(
        logger,
        e,
        context={
            "error_type": "UNEXPECTED_ERROR",
            "error_message": str(e)
        }
    )
    return ErrorCode.INTERNAL_ERROR.exit_code
