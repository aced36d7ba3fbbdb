"""Convergence traces with a fixed CSV schema."""
from __future__ import annotations

import csv
import os
import tempfile
from pathlib import Path

from .exceptions import ConfigurationError

__all__ = ["TRACE_COLUMNS", "Trace", "read_trace", "write_rows"]

TRACE_COLUMNS = ("run_id", "method", "stage", "iter", "f_gap", "grad_x_calls", "grad_y_calls",
                 "hess_y_calls", "delta", "eps_tilde")

_INT_COLS = {"stage", "iter", "grad_x_calls", "grad_y_calls", "hess_y_calls"}
_FLOAT_COLS = {"f_gap", "delta", "eps_tilde"}


def _fmt(col, v):
    if col in _FLOAT_COLS:
        return repr(float(v))
    if col in _INT_COLS:
        return str(int(v))
    return str(v)


class Trace:
    """Rows of one run.  ``add`` fills missing numeric fields with zero."""

    def __init__(self, run_id, method):
        self.run_id = str(run_id)
        self.method = str(method)
        self.rows = []

    def add(self, **row):
        full = {"run_id": self.run_id, "method": self.method}
        for col in TRACE_COLUMNS[2:]:
            full[col] = row.get(col, 0)
        self.rows.append(full)

    def __len__(self):
        return len(self.rows)

    def write(self, path):
        write_rows(path, self.rows)


def write_rows(path, rows):
    """Write rows atomically (temporary file then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for r in rows:
                w.writerow([_fmt(c, r[c]) for c in TRACE_COLUMNS])
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_trace(path):
    """Parse a trace file; raises :class:`ConfigurationError` on a bad header or cell."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigurationError(f"{path}:1: empty trace file") from None
        missing = [c for c in TRACE_COLUMNS if c not in header]
        if missing:
            raise ConfigurationError(f"{path}:1: missing columns {', '.join(missing)}")
        idx = {c: header.index(c) for c in TRACE_COLUMNS}
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            try:
                row = {}
                for c, i in idx.items():
                    v = rec[i]
                    row[c] = int(v) if c in _INT_COLS else float(v) if c in _FLOAT_COLS else v
            except (IndexError, ValueError) as err:
                raise ConfigurationError(f"{path}:{lineno}: malformed row ({err})") from None
            rows.append(row)
    return rows
