"""Self-describing CSV output.

Files start with ``#`` comment lines holding the resolved configuration,
followed by a header whose cells read ``name[unit]``.  Floats are written
with 17 significant digits so they round-trip exactly.  Non-finite values
are never written: the cell is left empty and the row's ``status`` column
says which field was affected.
"""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from dataclasses import dataclass
from datetime import datetime, timezone

__all__ = ["Column", "Schema", "CSVWriteError", "emit_csv", "format_value", "read_csv", "TIMESTAMP_KEY"]

TIMESTAMP_KEY = "created"


class CSVWriteError(OSError):
    pass


@dataclass(frozen=True)
class Column:
    name: str
    unit: str = "1"
    kind: type = float

    @property
    def header(self) -> str:
        return f"{self.name}[{self.unit}]"


class Schema:
    """Ordered columns; a trailing ``status`` column is always appended."""

    def __init__(self, *columns: Column):
        names = [c.name for c in columns]
        if "status" in names:
            raise ValueError("'status' is reserved")
        if len(set(names)) != len(names):
            raise ValueError("duplicate column names")
        self.columns = tuple(columns) + (Column("status", "-", str),)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def header(self) -> list[str]:
        return [c.header for c in self.columns]


def format_value(value, kind: type = float) -> str:
    if value is None:
        return ""
    if kind is float:
        return format(float(value), ".17g")
    if kind is int:
        return str(int(value))
    return str(value)


def _finite(value) -> bool:
    return not (isinstance(value, float) and not math.isfinite(value))


def _render(rows, schema: Schema, meta: dict) -> str:
    buf = io.StringIO()
    for k, v in meta.items():
        buf.write(f"# {k} = {v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(schema.header)
    for row in rows:
        unknown = set(row) - set(schema.names)
        if unknown:
            raise ValueError(f"row has fields outside the schema: {sorted(unknown)}")
        status = str(row.get("status") or "ok")
        cells = []
        bad = []
        for col in schema.columns[:-1]:
            v = row.get(col.name)
            if v is not None and col.kind is float:
                v = float(v)
            if v is not None and not _finite(v):
                bad.append(col.name)
                v = None
            cells.append(format_value(v, col.kind))
        if bad:
            note = "nonfinite:" + "+".join(bad)
            status = note if status == "ok" else f"{status};{note}"
        cells.append(status)
        w.writerow(cells)
    return buf.getvalue()


def emit_csv(rows, schema: Schema, path: str, meta: dict | None = None, timestamp: bool = True) -> str:
    """Write ``rows`` (dicts keyed by column name) atomically to ``path``.

    The file appears only once it is complete; on any failure nothing is
    left behind.  Returns the path.
    """
    meta = dict(meta or {})
    if timestamp:
        meta[TIMESTAMP_KEY] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    text = _render(list(rows), schema, meta)
    folder = os.path.dirname(os.path.abspath(path))
    tmp = None
    try:
        fd, tmp = tempfile.mkstemp(dir=folder, prefix=".partial-", suffix=".csv")
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
        tmp = None
    except OSError as exc:
        raise CSVWriteError(f"cannot write {path}: {exc}") from exc
    finally:
        if tmp is not None and os.path.exists(tmp):
            os.unlink(tmp)
    return path


def read_csv(path: str):
    """Parse a file written by :func:`emit_csv` into ``(meta, header, rows)``."""
    meta, lines = {}, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].partition("=")
                meta[k.strip()] = v.strip()
            else:
                lines.append(line)
    reader = csv.reader(lines)
    header = next(reader)
    return meta, header, [dict(zip(header, r)) for r in reader]
