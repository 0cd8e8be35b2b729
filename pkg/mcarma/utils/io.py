import json
from pathlib import Path
from typing import Any, Optional, TypeVar
import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError
from mcarma.core.exceptions import AppException, ErrorCode
from mcarma.core.logging import get_logger
from mcarma.models.levy import Sample

logger = get_logger(__name__)

SCHEMA_VERSION = 1
FLOAT_FORMAT = "%.17g"

M = TypeVar("M", bound=BaseModel)

def write_sample_csv(path: Path, sample: Sample) -> Path:
    """
    ヘッダ "t,y1,...,yd" で観測値を書き出す（17桁、往復で値が変わらない形式）
    """
    path = Path(path)
    frame = pd.DataFrame(sample.values, columns=[f"y{i + 1}" for i in range(sample.d)])
    frame.insert(0, "t", sample.times)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    except OSError as e:
        raise AppException(error_code=ErrorCode.IO_ERROR, message=f"Failed to write {path}: {e}", context={"path": str(path)})
    return path

def read_sample_csv(path: Path, h: Optional[float] = None) -> Sample:
    """
    "t,y1,...,yd" 形式の CSV を読み込む。h を省略した場合は t 列から求める
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError:
        raise AppException(error_code=ErrorCode.IO_ERROR, message=f"Data file not found: {path}", context={"path": str(path)})
    except pd.errors.EmptyDataError:
        raise AppException(error_code=ErrorCode.INVALID_INPUT, message=f"Data file is empty: {path}", context={"path": str(path)})
    except pd.errors.ParserError as e:
        raise AppException(error_code=ErrorCode.MALFORMED_DATA, message=f"Cannot parse {path}: {e}", context={"path": str(path)})

    columns = [c.strip() for c in frame.columns]
    expected = ["t"] + [f"y{i}" for i in range(1, len(columns))]
    if len(columns) < 2 or columns != expected:
        raise AppException(
            error_code=ErrorCode.MALFORMED_DATA,
            message=f"Line 1 of {path}: header must be {','.join(expected) if len(columns) >= 2 else 't,y1,...'}",
            context={"path": str(path), "line": 1}
        )
    if frame.shape[0] == 0:
        raise AppException(error_code=ErrorCode.INVALID_INPUT, message=f"Data file has no observations: {path}")

    numeric = frame.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    bad = np.flatnonzero(~np.all(np.isfinite(numeric), axis=1))
    if bad.size:
        line = int(bad[0]) + 2
        raise AppException(
            error_code=ErrorCode.MALFORMED_DATA,
            message=f"Line {line} of {path} is not a row of finite numbers",
            context={"path": str(path), "line": line}
        )

    t = numeric[:, 0]
    if h is None:
        h = float(t[1] - t[0]) if t.size > 1 else float(t[0])
    if h <= 0.0:
        raise AppException(error_code=ErrorCode.MALFORMED_DATA, message=f"Sampling distance from {path} must be positive")
    expected_t = h * np.arange(1, t.size + 1)
    off = np.flatnonzero(np.abs(t - expected_t) > 1e-9 * np.maximum(1.0, expected_t))
    if off.size:
        line = int(off[0]) + 2
        raise AppException(
            error_code=ErrorCode.MALFORMED_DATA,
            message=f"Line {line} of {path}: time {t[off[0]]} is not on the grid k*h with h = {h}",
            context={"path": str(path), "line": line}
        )
    return Sample(h=h, values=numeric[:, 1:])

def write_json(path: Path, payload: dict[str, Any]) -> Path:
    path = Path(path)
    body = payload if "schema_version" in payload else {"schema_version": SCHEMA_VERSION, **payload}
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(body, indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise AppException(error_code=ErrorCode.IO_ERROR, message=f"Failed to write {path}: {e}", context={"path": str(path)})
    return path

def write_table(path: Path, frame: pd.DataFrame) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    except OSError as e:
        raise AppException(error_code=ErrorCode.IO_ERROR, message=f"Failed to write {path}: {e}", context={"path": str(path)})
    return path

def load_config(path: Path, model: type[M]) -> M:
    """
    JSON 設定ファイルを pydantic モデルとして読み込む
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise AppException(error_code=ErrorCode.IO_ERROR, message=f"Cannot read config {path}: {e}", context={"path": str(path)})
    try:
        return model.model_validate_json(text)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"]) or "<root>"
        raise AppException(
            error_code=ErrorCode.CONFIG_ERROR,
            message=f"Invalid config {path}: {field}: {first['msg']}",
            context={"path": str(path), "errors": e.errors(include_url=False, include_context=False)}
        )

def resolve_path(base: Path, value: str) -> Path:
    """
    設定ファイルからの相対パスを解決する
    """
    candidate = Path(value)
    return candidate if candidate.is_absolute() else Path(base).parent / candidate
