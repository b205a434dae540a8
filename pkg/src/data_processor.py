"""
Result Export and Input Validation Utilities
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List

import numpy as np
import pandas as pd

from src.schema import CompartmentSeries

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("date", "deaths_daily")
CONFIRMED_COLUMNS = ("confirmed_daily", "confirmed_cum")
NUMERIC_COLUMNS = (
    "confirmed_daily", "confirmed_cum", "deaths_daily", "recovered_daily", "active", "population",
    "tests", "positives", "excess_weekly",
)


def _to_jsonable(item: Any) -> Any:
    if hasattr(item, "model_dump"):
        return item.model_dump(mode="json")
    if isinstance(item, np.ndarray):
        return item.tolist()
    if isinstance(item, (np.integer, np.floating)):
        return item.item()
    return str(item)


class DataProcessor:
    """Write run artifacts into one output directory"""

    def __init__(self, output_dir: str = "./outputs/run"):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def export_to_csv(self, frame: pd.DataFrame, filename: str) -> Path:
        """Export a frame with full float precision and a stable column order"""
        output_path = self.output_dir / filename
        frame.to_csv(output_path, index=False, float_format="%.17g", lineterminator="\n")
        logger.info("Exported %d rows to %s", len(frame), output_path)
        return output_path

    def export_to_json(self, data: Dict[str, Any], filename: str) -> Path:
        output_path = self.output_dir / filename
        with open(output_path, "w", encoding="utf-8") as f:
            json.dump(data, f, ensure_ascii=False, indent=2, sort_keys=True, default=_to_jsonable)
            f.write("\n")
        logger.info("Exported %s", output_path)
        return output_path


class DataValidator:
    """Validate raw input frames and constructed series"""

    def validate_frame(self, frame: pd.DataFrame) -> Dict[str, Any]:
        """Check columns, date grid and sign of the daily counts"""
        issues = []
        missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
        if missing:
            issues.append(f"missing required columns: {', '.join(missing)}")
        if not any(c in frame.columns for c in CONFIRMED_COLUMNS):
            issues.append("missing confirmed_daily or confirmed_cum column")
        if "date" in frame.columns:
            dates = pd.to_datetime(frame["date"], errors="coerce")
            if dates.isna().any():
                issues.append(f"unparseable dates in rows {np.flatnonzero(dates.isna())[:5].tolist()}")
            else:
                steps = dates.diff().dt.days.iloc[1:]
                if (steps <= 0).any():
                    first = int(np.argmax((steps <= 0).to_numpy())) + 1
                    issues.append(f"dates not increasing at {dates.iloc[first].date()}")
                gaps = steps[steps > 1]
                for idx in gaps.index[:5]:
                    issues.append(f"date gap of {int(gaps[idx]) - 1} days before {dates[idx].date()}")
        numeric = {}
        for column in NUMERIC_COLUMNS:
            if column in frame.columns:
                numeric[column] = pd.to_numeric(frame[column], errors="coerce")
                bad = numeric[column].isna() & frame[column].notna()
                if bad.any():
                    issues.append(f"non-numeric {column} values in rows {np.flatnonzero(bad)[:5].tolist()}")
        if "tests" in numeric and "positives" in numeric:
            over = numeric["positives"].fillna(0) > numeric["tests"].fillna(0)
            if over.any():
                issues.append(f"positives exceed tests in {int(over.sum())} rows")

        negative_rows = 0
        for column in ("confirmed_daily", "deaths_daily", "recovered_daily"):
            if column in numeric:
                negative_rows += int((numeric[column] < 0).sum())
        return {
            "valid": len(issues) == 0,
            "issues": issues,
            "negative_rows": negative_rows,
            "quality_score": round(1.0 - negative_rows / max(1, len(frame)), 3),
        }

    def validate_series(self, series: CompartmentSeries) -> Dict[str, Any]:
        """Soft checks on a constructed series (hard invariants hold by construction)"""
        issues = []
        if series.n_days < 30:
            issues.append(f"short sample ({series.n_days} days)")
        if np.any(series.i[:-1] == 0):
            issues.append("active infections reach zero inside the sample")
        missing_share = float(series.missing_rc.mean()) if series.n_days else 0.0
        if missing_share > 0.5:
            issues.append(f"recoveries missing on {missing_share:.0%} of days")
        zero_days = int(np.count_nonzero(series.delta_c == 0))
        return {
            "valid": len(issues) == 0,
            "issues": issues,
            "missing_recoveries": missing_share,
            "zero_case_days": zero_days,
        }

    def generate_report(self, series_list: List[CompartmentSeries]) -> Dict[str, Any]:
        """Per-series validation summary"""
        report = {}
        for k, series in enumerate(series_list):
            name = series.name or f"series_{k + 1}"
            report[name] = {
                "days": series.n_days,
                "start": str(series.dates[0]) if series.n_days else None,
                "end": str(series.dates[-1]) if series.n_days else None,
                **self.validate_series(series),
            }
        return report
