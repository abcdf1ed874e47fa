"""Delimited report serialization checks."""

import numpy as np
import pytest

from saliencybench.errors import IOFormatError
from saliencybench.report import (
    CSV_COLUMNS,
    MetricRow,
    format_value,
    read_report_csv,
    write_curve_csv,
    write_report_csv,
    write_report_json,
)


def rows():
    return [
        MetricRow("ds", "m-1", "gradient", "pg", "s0", 1.0, 1, 0, 7),
        MetricRow("ds", "m-1", "gradient", "pg", "s1", None, 0, 1, 7),
        MetricRow("ds", "m-1", "gradient", "pg", "", 1.0, 1, 1, 7),
    ]


def test_format_value():
    assert format_value(None) == ""
    assert format_value(0.5) == "0.5"
    assert format_value(1.0 / 3.0) == "0.333333333"
    assert format_value(float("nan")) == "nan"
    assert format_value(1234567.0) == "1234567"


def test_round_trip(tmp_path):
    path = tmp_path / "report.csv"
    write_report_csv(rows(), path)
    back = read_report_csv(path)
    assert len(back) == 3
    assert back[0].value == 1.0
    assert back[1].value is None
    assert back[2].is_aggregate
    assert not back[0].is_aggregate
    assert back[0].seed == 7


def test_csv_bytes_are_stable(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_report_csv(rows(), a)
    write_report_csv(rows(), b)
    assert a.read_bytes() == b.read_bytes()
    data = a.read_bytes()
    assert b"\r" not in data
    assert data.startswith(",".join(CSV_COLUMNS).encode())


def test_json_bytes_are_stable(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    write_report_json(rows(), a)
    write_report_json(rows(), b)
    assert a.read_bytes() == b.read_bytes()


def test_curve_csv(tmp_path):
    path = tmp_path / "curve.csv"
    write_curve_csv(path, ("fraction", "score"), [(0.0, 0.1), (1.0, 0.9)])
    lines = path.read_text().splitlines()
    assert lines[0] == "fraction,score"
    assert len(lines) == 3


def test_read_rejects_wrong_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(IOFormatError):
        read_report_csv(path)
