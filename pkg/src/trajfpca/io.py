"""Reading and writing cohorts and results.

Floats are written with 17 significant digits so that every double
survives a write/read cycle unchanged.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .curves import LongitudinalSample

FLOAT_FORMAT = ".17g"
REQUIRED_COLUMNS = ("id", "time", "value")


class DataError(ValueError):
    """Malformed input file; the message names the file and line."""


def format_float(x) -> str:
    return format(float(x), FLOAT_FORMAT)


def _encode(obj, indent: int, level: int) -> str:
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        # JSON has no NaN or infinity
        return format_float(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    pad = "\n" + " " * (indent * (level + 1))
    end = "\n" + " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [json.dumps(str(k), ensure_ascii=False) + ": " + _encode(v, indent, level + 1) for k, v in obj.items()]
        return "{" + pad + ("," + pad).join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        parts = [_encode(v, indent, level + 1) for v in obj]
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(parts) + "]"
        return "[" + pad + ("," + pad).join(parts) + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json(obj, indent: int = 2) -> str:
    """JSON text with 17-significant-digit floats and a trailing newline."""
    return _encode(obj, indent, 0) + "\n"


def write_text_atomic(path, text: str) -> None:
    """Write ``text`` to a temporary file beside ``path``, then rename it into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header: Sequence[str], rows) -> str:
    """Render rows as CSV; floats get 17 significant digits."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def cohort_csv(samples: Sequence[LongitudinalSample], group_col: str = "group") -> str:
    """Long-format cohort table; the group column is present when any subject has a group."""
    with_group = any(s.group is not None for s in samples)
    header = list(REQUIRED_COLUMNS) + ([group_col] if with_group else [])

    def rows():
        for s in samples:
            for t, y in zip(s.times, s.values):
                row = [s.subject_id, float(t), float(y)]
                if with_group:
                    row.append("" if s.group is None else s.group)
                yield row

    return csv_text(header, rows())


def write_cohort_csv(samples: Sequence[LongitudinalSample], path, group_col: str = "group") -> None:
    write_text_atomic(path, cohort_csv(samples, group_col))


def _parse_number(text, what, where):
    try:
        x = float(text)
    except ValueError:
        raise DataError(f"{where}: non-numeric {what} {text!r}") from None
    if not math.isfinite(x):
        raise DataError(f"{where}: non-finite {what} {text!r}")
    return x


def read_cohort(lines, source: str = "<input>", group_col: Optional[str] = "group") -> list:
    """Parse long-format rows from an iterable of text lines.

    Parameters
    ----------
    lines : iterable of str
    source : str
        Name used in diagnostics.
    group_col : str, optional
        Column holding group labels. When it is absent from the header the
        cohort is ungrouped; ``None`` ignores any group column.

    Returns
    -------
    list of LongitudinalSample
        In order of first appearance, with times sorted.
    """
    reader = csv.reader(lines)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError(f"{source}: empty file") from None
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise DataError(f"{source}:1: missing column(s) {', '.join(missing)}")
    col = {c: header.index(c) for c in REQUIRED_COLUMNS}
    grouped = group_col is not None and group_col in header
    if grouped:
        col["group"] = header.index(group_col)

    subjects = {}
    for row in reader:
        where = f"{source}:{reader.line_num}"
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise DataError(f"{where}: expected {len(header)} fields, found {len(row)}")
        sid = row[col["id"]].strip()
        if not sid:
            raise DataError(f"{where}: empty id")
        t = _parse_number(row[col["time"]].strip(), "time", where)
        y = _parse_number(row[col["value"]].strip(), "value", where)
        group = row[col["group"]].strip() if grouped else None
        if grouped and not group:
            raise DataError(f"{where}: empty group for subject {sid!r}")
        entry = subjects.setdefault(sid, {"group": group, "obs": {}})
        if entry["group"] != group:
            raise DataError(f"{where}: subject {sid!r} has conflicting groups {entry['group']!r} and {group!r}")
        if t in entry["obs"]:
            first = entry["obs"][t][1]
            raise DataError(f"{where}: duplicate time {row[col['time']].strip()} for subject {sid!r} (first at line {first})")
        entry["obs"][t] = (y, reader.line_num)

    if not subjects:
        raise DataError(f"{source}: no data rows")
    out = []
    for sid, entry in subjects.items():
        times = np.array(sorted(entry["obs"]))
        values = np.array([entry["obs"][t][0] for t in times])
        out.append(LongitudinalSample(sid, times, values, entry["group"]))
    return out


def ingest_csv(path, group_col: Optional[str] = "group") -> list:
    """Read a cohort CSV with columns ``id,time,value`` and an optional group column."""
    path = Path(path)
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            return read_cohort(fh, str(path), group_col)
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not UTF-8 ({exc.reason})") from None
