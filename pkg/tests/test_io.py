import json
import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from mcarma.core.exceptions import AppException, ErrorCode
from mcarma.models.levy import Sample
from mcarma.models.qmle import FitOptions
from mcarma.utils.io import load_config, read_sample_csv, resolve_path, write_json, write_sample_csv


def test_sample_csv_round_trip(tmp_path, rng):
    sample = Sample(h=0.5, values=rng.standard_normal((20, 2)))
    path = write_sample_csv(tmp_path / "data" / "sample.csv", sample)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,y1,y2"
    assert lines[1].startswith("0.5,")

    loaded = read_sample_csv(path)
    assert loaded.h == 0.5
    assert_array_equal(loaded.values, sample.values)


def test_read_sample_csv_with_explicit_h(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("t,y1\n2,1.5\n4,2.5\n6,3.5\n")
    sample = read_sample_csv(path, h=2.0)
    assert sample.h == 2.0
    assert_allclose(sample.values[:, 0], [1.5, 2.5, 3.5])


@pytest.mark.parametrize(
    "text,code,line",
    [
        ("time,y1\n1,0.5\n", ErrorCode.MALFORMED_DATA, 1),
        ("t,y2\n1,0.5\n", ErrorCode.MALFORMED_DATA, 1),
        ("t,y1\n1,0.5\n2,abc\n", ErrorCode.MALFORMED_DATA, 3),
        ("t,y1\n1,0.5\n2,\n", ErrorCode.MALFORMED_DATA, 3),
        ("t,y1\n1,0.5\n2,0.1\n4,0.2\n", ErrorCode.MALFORMED_DATA, 4),
    ],
)
def test_read_sample_csv_malformed(tmp_path, text, code, line):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(AppException) as exc:
        read_sample_csv(path)
    assert exc.value.error_code == code
    assert exc.value.context["line"] == line


def test_read_sample_csv_empty_and_missing(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(AppException) as exc:
        read_sample_csv(empty)
    assert exc.value.error_code == ErrorCode.INVALID_INPUT

    header_only = tmp_path / "header.csv"
    header_only.write_text("t,y1\n")
    with pytest.raises(AppException) as exc:
        read_sample_csv(header_only)
    assert exc.value.error_code == ErrorCode.INVALID_INPUT

    with pytest.raises(AppException) as exc:
        read_sample_csv(tmp_path / "missing.csv")
    assert exc.value.error_code == ErrorCode.IO_ERROR


def test_write_json_adds_schema_version(tmp_path):
    path = write_json(tmp_path / "out" / "a.json", {"value": 1.5})
    assert json.loads(path.read_text()) == {"schema_version": 1, "value": 1.5}


def test_load_config_reports_field(tmp_path):
    path = tmp_path / "fit.json"
    path.write_text('{"n_starts": 0}')
    with pytest.raises(AppException) as exc:
        load_config(path, FitOptions)
    assert exc.value.error_code == ErrorCode.CONFIG_ERROR
    assert "n_starts" in exc.value.message

    path.write_text('{"n_starts": 3}')
    assert load_config(path, FitOptions).n_starts == 3


def test_resolve_path(tmp_path):
    config = tmp_path / "configs" / "job.json"
    assert resolve_path(config, "data.csv") == tmp_path / "configs" / "data.csv"
    assert resolve_path(config, "/abs/data.csv").as_posix() == "/abs/data.csv"
