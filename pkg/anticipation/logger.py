"""
Logging setup and the results sink.
Run artifacts (histories, evaluation reports, experiment tables) are written
as CSV through pandas and as JSON with sorted keys, so reruns are byte-identical.
"""

import json
import logging
import os
from typing import Any, Dict, List

import numpy as np
import pandas as pd

from anticipation.config import LOG_LEVEL

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"

logger = logging.getLogger(__name__)


def setup_logging(level: str = LOG_LEVEL):
    """Configure the root logger once with a single stream handler."""
    root = logging.getLogger()
    if not root.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)
    root.setLevel(level.upper() if isinstance(level, str) else level)


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value


def log_run_summary(path: str, data: Dict[str, Any]):
    """Write a JSON summary."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as f:
        json.dump(_jsonable(data), f, sort_keys=True, indent=2)
        f.write("\n")
    logger.info("Summary written to %s", path)


def log_table(path: str, frame: pd.DataFrame):
    """Write a table as CSV."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    logger.info("Table written to %s (%d rows)", path, len(frame))


def log_history(path: str, rows: List[Dict[str, Any]]):
    """Write per-epoch history rows (losses and recalls) as CSV."""
    if not rows:
        return
    columns = list(rows[0])
    for row in rows[1:]:
        columns += [c for c in row if c not in columns]
    log_table(path, pd.DataFrame(rows, columns=columns))


def log_eval_report(out_dir: str, report, prefix: str = "eval"):
    """Write an EvalReport as JSON (with per-class tables) and as a flat CSV."""
    log_run_summary(os.path.join(out_dir, f"{prefix}.json"), report.to_dict())
    log_table(os.path.join(out_dir, f"{prefix}.csv"), report.to_frame())
