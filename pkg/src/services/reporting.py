"""Comparison tables and curve series built from evaluation reports"""

import json
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import pandas as pd
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from config.settings import get_settings
from src.errors import DocumentParseError
from src.services.evaluation import EXTRA_KEYS, EXTRA_LABELS, METRIC_KEYS, METRIC_LABELS, EvalReport

LabeledReport = Tuple[str, EvalReport]


class ReportTable(BaseModel):
    """Rendered comparison table, plain text plus machine-readable rows"""

    model_config = ConfigDict(frozen=True)

    text: str
    rows: List[Dict[str, Union[str, float]]]
    columns: List[str]
    best: Dict[str, List[str]] = Field(default_factory=dict)
    second_best: Dict[str, List[str]] = Field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=self.columns)

    def to_csv(self) -> str:
        return self.to_frame().to_csv(index=False, float_format="%.2f", lineterminator="\n")


def _rank_labels(values: Dict[str, float]) -> Tuple[List[str], List[str]]:
    """Labels holding the best and second-best distinct rounded value"""
    distinct = sorted({round(v, 2) for v in values.values()}, reverse=True)
    best = [label for label, v in values.items() if round(v, 2) == distinct[0]]
    second = []
    if len(distinct) > 1:
        second = [label for label, v in values.items() if round(v, 2) == distinct[1]]
    return best, second


def report_table(reports: Sequence[LabeledReport], extra: Sequence[str] = ()) -> ReportTable:
    """
    Render reports in the column order AP Hand, mAP Obj, AP H+Side, AP H+State,
    mAP H+Obj, mAP All.

    The best value of each column is bolded (**x**) and the second best
    underlined (_x_); equal values share the mark.

    Args:
        reports: (label, report) pairs, at least one
        extra: Supplementary metrics (map_det, mar_obj) appended after the six

    Returns:
        ReportTable
    """
    if not reports:
        raise ValueError("report_table needs at least one report")

    unknown = [k for k in extra if k not in EXTRA_KEYS]
    if unknown:
        raise ValueError(f"unknown extra column {unknown[0]}, expected one of {list(EXTRA_KEYS)}")

    keys = list(METRIC_KEYS) + list(dict.fromkeys(extra))
    labels = {**METRIC_LABELS, **EXTRA_LABELS}
    meta_keys = sorted({k for _, r in reports for k in r.metadata})
    columns = ["Model"] + meta_keys + [labels[k] for k in keys]

    best: Dict[str, List[str]] = {}
    second: Dict[str, List[str]] = {}
    for key in keys:
        best[key], second[key] = _rank_labels({label: getattr(r, key) for label, r in reports})

    rows, cells = [], []
    for label, report in reports:
        row: Dict[str, Union[str, float]] = {"Model": label}
        cell: Dict[str, str] = {"Model": label}
        for key in meta_keys:
            row[key] = cell[key] = report.metadata.get(key, "-")
        for key in keys:
            value = getattr(report, key)
            text = f"{value:.2f}"
            if label in best[key]:
                text = f"**{text}**"
            elif label in second[key]:
                text = f"_{text}_"
            row[labels[key]] = value
            cell[labels[key]] = text
        rows.append(row)
        cells.append(cell)

    text = pd.DataFrame(cells, columns=columns).to_string(index=False)
    return ReportTable(text=text + "\n", rows=rows, columns=columns, best=best, second_best=second)


def curve_series(reports: Sequence[LabeledReport]) -> pd.DataFrame:
    """Long-format (label, metric, value, metadata...) series for plotting"""
    records = []
    for label, report in reports:
        for key in METRIC_KEYS + ("map_det",):
            record = {"label": label, "metric": key, "value": getattr(report, key)}
            record.update({f"meta_{k}": v for k, v in sorted(report.metadata.items())})
            records.append(record)
    return pd.DataFrame.from_records(records)


def per_category_frame(report: EvalReport) -> pd.DataFrame:
    """Per-category APs of active objects and of all objects"""
    names = list(dict.fromkeys(list(report.per_category_det) + list(report.per_category)))
    return pd.DataFrame({
        "category": names,
        "ap_active": [report.per_category.get(n) for n in names],
        "ap_all": [report.per_category_det.get(n) for n in names],
        "absent": [n in report.absent_categories for n in names],
    })


def load_report(path: Union[str, Path]) -> EvalReport:
    """
    Read a report file written by the evaluate command

    Raises:
        DocumentParseError: If the file is not a JSON object
        ReportSchemaError: If its schema version differs from the current one
    """
    path = Path(path)
    try:
        flat = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DocumentParseError(str(exc), source=str(path)) from exc
    if not isinstance(flat, dict):
        raise DocumentParseError("report must be a JSON object", source=str(path))

    try:
        report = EvalReport.from_flat(flat, expected_version=get_settings().report_schema_version)
    except ValidationError as exc:
        raise DocumentParseError(str(exc), source=str(path)) from exc
    logger.debug(f"Loaded report {path}")
    return report
