import json

import numpy as np
import pandas as pd

from src.data_processor import DataProcessor, DataValidator
from src.schema import CompartmentSeries
from tests.conftest import daily_dates


def _frame(**overrides) -> pd.DataFrame:
    columns = {
        "date": ["2020-03-01", "2020-03-02", "2020-03-03"],
        "confirmed_daily": [10, 12, 8],
        "deaths_daily": [1, 0, 1],
    }
    columns.update(overrides)
    return pd.DataFrame(columns)


def test_export_csv_keeps_full_precision(tmp_path):
    processor = DataProcessor(tmp_path / "nested" / "run")
    path = processor.export_to_csv(pd.DataFrame({"x": [0.1 + 0.2, 1e-300], "y": [1, 2]}), "values.csv")
    assert path.parent.is_dir()
    text = path.read_text()
    assert text.splitlines()[0] == "x,y"
    assert "\r" not in text
    assert pd.read_csv(path, float_precision="round_trip")["x"].tolist() == [0.1 + 0.2, 1e-300]


def test_export_json_handles_numpy_values(tmp_path):
    processor = DataProcessor(tmp_path)
    path = processor.export_to_json({"b": np.float64(1.5), "a": np.arange(3), "n": np.int64(4)}, "summary.json")
    text = path.read_text()
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {"a": [0, 1, 2], "b": 1.5, "n": 4}


def test_valid_frame():
    report = DataValidator().validate_frame(_frame())
    assert report["valid"]
    assert report["issues"] == []
    assert report["quality_score"] == 1.0


def test_frame_issues():
    validator = DataValidator()
    report = validator.validate_frame(_frame().drop(columns=["deaths_daily", "confirmed_daily"]))
    assert not report["valid"]
    assert any("deaths_daily" in issue for issue in report["issues"])
    assert any("confirmed" in issue for issue in report["issues"])

    gap = validator.validate_frame(_frame(date=["2020-03-01", "2020-03-04", "2020-03-05"]))
    assert gap["issues"] == ["date gap of 2 days before 2020-03-04"]

    backwards = validator.validate_frame(_frame(date=["2020-03-02", "2020-03-01", "2020-03-03"]))
    assert any("not increasing" in issue for issue in backwards["issues"])

    testing = validator.validate_frame(_frame(tests=[10, 10, 10], positives=[1, 12, 2]))
    assert testing["issues"] == ["positives exceed tests in 1 rows"]


def test_negative_counts_lower_quality_without_failing():
    report = DataValidator().validate_frame(_frame(confirmed_daily=[10, -3, 8], deaths_daily=[-1, 0, 1]))
    assert report["valid"]
    assert report["negative_rows"] == 2
    assert report["quality_score"] == round(1 - 2 / 3, 3)


def test_series_report(toy_series):
    gappy = CompartmentSeries.from_counts(daily_dates(40), np.full(40, 5.0), np.zeros(40), 1e6, 100,
                                          delta_rc=np.r_[np.full(30, np.nan), np.full(10, 2.0)], name="gappy")
    report = DataValidator().generate_report([toy_series, gappy])
    assert set(report) == {"toy", "gappy"}
    assert report["toy"]["days"] == 10
    assert report["toy"]["issues"] == ["short sample (10 days)"]
    assert report["gappy"]["issues"] == ["recoveries missing on 75% of days"]
    assert report["gappy"]["missing_recoveries"] == 0.75
    assert report["gappy"]["start"] == "2020-03-02"


def test_non_numeric_counts_are_issues():
    report = DataValidator().validate_frame(_frame(deaths_daily=[1, "two", 1], tests=[10, 10, "x"], positives=[1, 2, 3]))
    assert not report["valid"]
    assert "non-numeric deaths_daily values in rows [1]" in report["issues"]
    assert "non-numeric tests values in rows [2]" in report["issues"]
    # a missing value is not a type error
    assert DataValidator().validate_frame(_frame(deaths_daily=[1, None, 1]))["valid"]
