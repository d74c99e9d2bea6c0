"""CSV reports - one row per (adapter, metric, velocity bin), plus cross-run aggregation"""
import logging
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import pandas as pd

from sources.base import ConfigurationError

logger = logging.getLogger(__name__)

CSV_SCHEMA_VERSION = 1
COLUMNS = ["version", "scenario", "seed", "adapter", "metric", "bin", "value"]
AGGREGATE_COLUMNS = ["scenario", "adapter", "metric", "bin", "mean", "std", "runs"]
FLOAT_FORMAT = "%.4f"


class TabularReport(Protocol):
    def to_rows(self) -> list[tuple[str, int, str, str, str, float]]:
        """(scenario, seed, adapter, metric, bin, value) rows in a stable order."""
        ...


def report_frame(reports: TabularReport | Sequence[TabularReport]) -> pd.DataFrame:
    if not isinstance(reports, (list, tuple)):
        reports = [reports]
    rows = [(CSV_SCHEMA_VERSION, *row) for report in reports for row in report.to_rows()]
    return pd.DataFrame(rows, columns=COLUMNS)


def export_csv(reports: TabularReport | Sequence[TabularReport], path: Path) -> Path:
    """Write the reports' rows with values at 4 decimals. Bins without frames never appear."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    report_frame(reports).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"CSV Report: Wrote {path}")
    return path


def read_csv(path: Path) -> pd.DataFrame:
    frame = pd.read_csv(path)
    if list(frame.columns) != COLUMNS:
        raise ConfigurationError(f"{path} is not a report CSV (columns {list(frame.columns)})")
    frame = frame.astype({"scenario": str, "adapter": str, "metric": str, "bin": str})
    versions = set(frame["version"].unique())
    if versions - {CSV_SCHEMA_VERSION}:
        raise ConfigurationError(f"{path} has unsupported schema version(s) {sorted(versions)}")
    return frame


def aggregate(paths: Iterable[Path]) -> pd.DataFrame:
    """Mean and standard deviation per (scenario, adapter, metric, bin) across report files."""
    frames = [read_csv(p) for p in paths]
    if not frames:
        raise ConfigurationError("aggregate() needs at least one report CSV")
    combined = pd.concat(frames, ignore_index=True)
    grouped = combined.groupby(["scenario", "adapter", "metric", "bin"], sort=False)["value"]
    result = grouped.agg(mean="mean", std="std", runs="count").reset_index()
    result["std"] = result["std"].fillna(0.0)
    return result[AGGREGATE_COLUMNS]


def export_aggregate(frame: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"CSV Report: Wrote aggregate {path}")
    return path
