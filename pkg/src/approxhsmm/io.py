"""Reading observation series and writing run outputs."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import DataError
from .model import TimeSeries


def read_series(path, column="y", sqrt_transform=False) -> TimeSeries:
    """Read one numeric column of a CSV file with a header row.

    ``column`` is a header name or a zero-based position. Problems are
    collected over the whole file and reported with their line numbers.
    """
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        if isinstance(column, int):
            if not 0 <= column < len(header):
                raise DataError(f"{path} has no column {column}")
            idx = column
        elif column in header:
            idx = header.index(column)
        else:
            raise DataError(f"{path} has no column {column!r}; found {header}")
        values, bad = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                v = float(row[idx])
            except (IndexError, ValueError):
                bad.append(lineno)
                continue
            if not math.isfinite(v) or (sqrt_transform and v < 0):
                bad.append(lineno)
                continue
            values.append(v)
    if bad:
        shown = ", ".join(str(b) for b in bad[:20])
        more = f" and {len(bad) - 20} more" if len(bad) > 20 else ""
        raise DataError(f"{path}: invalid observations on lines {shown}{more}")
    if not values:
        raise DataError(f"{path} contains no observations")
    y = np.asarray(values)
    if sqrt_transform:
        y = np.sqrt(y)
    return TimeSeries(y, name=str(header[idx]))


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, data):
    """Write ``data`` as sorted JSON; non-finite numbers become ``null``."""
    Path(path).write_text(json.dumps(_plain(data), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_table(path, header, columns, fmt="%.17g"):
    """Write equally long columns as a CSV file with a header row."""
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt=fmt)


def read_table(path):
    """Read a numeric CSV written by :func:`write_table` into a dict of columns."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    return {name: np.atleast_1d(data[name]) for name in data.dtype.names}
