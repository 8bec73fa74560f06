"""
Report Writer Module

This module writes tabular results as CSV (through pandas, like every other
table in the toolkit) or as JSON records.
"""

import logging
import math
import os
from typing import Any, Dict, List, Union

import pandas as pd

from src.extractors.manifest import dump_structured
from src.utils.errors import UsageError

logger = logging.getLogger(__name__)

REPORT_FORMATS = ('csv', 'json')

# Fixed float formatting keeps reruns byte-identical; 17 digits read back exactly.
CSV_FLOAT_FORMAT = '%.17g'


def _clean(value: Any) -> Any:
    if isinstance(value, float) and math.isnan(value):
        return None
    if hasattr(value, 'item'):
        return _clean(value.item())
    return value


def frame_records(df: pd.DataFrame) -> List[Dict[str, Any]]:
    """DataFrame rows as plain dicts, NaN mapped to None."""
    return [{k: _clean(v) for k, v in row.items()} for row in df.to_dict('records')]


def write_report(table: Union[pd.DataFrame, List[Dict[str, Any]]], path: str, fmt: str = 'csv') -> str:
    """
    Write a table to `path` in the requested format.

    Args:
        table (DataFrame or list): Rows to write
        path (str): Destination; the suffix is replaced to match `fmt`
        fmt (str): 'csv' or 'json'

    Returns:
        str: The path written
    """
    if fmt not in REPORT_FORMATS:
        raise UsageError(f"unknown report format '{fmt}'", hint=f"choose one of {', '.join(REPORT_FORMATS)}")
    df = table if isinstance(table, pd.DataFrame) else pd.DataFrame(table)
    path = os.path.splitext(path)[0] + '.' + fmt
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)

    if fmt == 'csv':
        df.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n')
    else:
        dump_structured(frame_records(df), path)
    logger.info("Wrote %d rows to %s", len(df), path)
    return path


def read_report(path: str) -> pd.DataFrame:
    """Read a CSV or JSON report back into a DataFrame."""
    if path.endswith('.json'):
        return pd.read_json(path, orient='records', dtype=False, precise_float=True)
    return pd.read_csv(path, keep_default_na=True, float_precision='round_trip')
