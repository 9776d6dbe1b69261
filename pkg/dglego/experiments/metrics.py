"""Metric files: the long-format CSV and the structured run summary."""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
import pandas as pd

from dglego.config import METRICS_CSV, SUMMARY_JSON
from dglego.models.experiment import METRIC_COLUMNS, RunRecord

logger = logging.getLogger(__name__)


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def final_metrics(record: RunRecord) -> Dict[str, float]:
    """Last value of every (split, metric, layer) series, keyed ``split/metric[/layer]``."""
    final: Dict[str, float] = {}
    for row in record.rows:
        key = f"{row.split}/{row.metric}" if row.layer is None else f"{row.split}/{row.metric}/{row.layer}"
        final[key] = row.value
    return final


def build_summary(record: RunRecord) -> Dict[str, Any]:
    return _jsonable(
        {
            "kind": record.kind,
            "rows": len(record.rows),
            "final": final_metrics(record),
            "seed": record.metadata.get("seed"),
            "config_hash": record.metadata.get("config_hash"),
            "metadata": record.metadata,
        }
    )


def emit_metrics(record: RunRecord, directory: Union[str, Path]) -> Dict[str, Path]:
    """
    Write ``metrics.csv`` (header epoch,split,metric,value,layer) and ``summary.json``.

    Returns:
        Paths of the written files keyed "metrics" and "summary"
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / METRICS_CSV
    record.to_frame().to_csv(csv_path, index=False, columns=METRIC_COLUMNS)
    summary_path = directory / SUMMARY_JSON
    with open(summary_path, "w") as f:
        json.dump(build_summary(record), f, indent=2)
    logger.info(f"Wrote {len(record.rows)} metric rows to {csv_path}")
    return {"metrics": csv_path, "summary": summary_path}


def read_metrics(path: Union[str, Path]) -> pd.DataFrame:
    """Parse an emitted CSV back into a frame (``layer`` as nullable integer)."""
    path = Path(path)
    if path.is_dir():
        path = path / METRICS_CSV
    frame = pd.read_csv(path, dtype={"split": str, "metric": str})
    frame["layer"] = frame["layer"].astype("Int64")
    return frame


def read_summary(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if path.is_dir():
        path = path / SUMMARY_JSON
    return json.loads(path.read_text())
