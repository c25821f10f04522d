import csv
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence

import numpy as np


def _plain(value: Any) -> Any:
    # numpy scalars/arrays are not JSON serializable
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def write_json(path: Path, payload: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(_plain(payload), f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")
    return path


def read_json(path: Path) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Write a CSV with a mandatory header row, LF line endings and repr-formatted floats."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])
    return path


def _format_cell(value: Any) -> str:
    value = _plain(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_series_csv(path: Path) -> np.ndarray:
    """Read a `t,value` CSV and return the value column ordered by t."""
    times: List[float] = []
    values: List[float] = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or list(reader.fieldnames)[:2] != ["t", "value"]:
            raise ValueError(f"{path}: expected header 't,value', got {reader.fieldnames}")
        for row in reader:
            times.append(float(row["t"]))
            values.append(float(row["value"]))
    order = np.argsort(np.asarray(times), kind="stable")
    return np.asarray(values, dtype=float)[order]
