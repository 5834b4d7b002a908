"""
stability_lab/serialization.py
CSV / JSON helpers shared by reports, ensembles and studies.

CSV files follow RFC 4180 (header row, CRLF line endings) and print floats
with 17 significant digits so 64-bit values round-trip losslessly.
"""

import json
import math
from pathlib import Path
from typing import Any, Dict, Optional, Union

import pandas as pd

FLOAT_FORMAT = "%.17g"
CSV_LINE_TERMINATOR = "\r\n"

PathLike = Union[str, Path]


def format_float(value: Optional[float]) -> str:
    """17-significant-digit text, empty for missing values"""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return FLOAT_FORMAT % value


def write_csv(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT,
                 lineterminator=CSV_LINE_TERMINATOR)
    return path


def read_csv(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip", keep_default_na=False,
                       na_values=[""])


def load_json(path: PathLike) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def dump_json(data: Dict[str, Any], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
    return path
