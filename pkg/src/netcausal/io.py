"""Matrix text files and versioned CSV output."""

from __future__ import annotations

import csv
import io
import json
import os
from pathlib import Path

import numpy as np

from .model import check_interaction

CSV_SCHEMA = "netcausal-csv/1"


def write_matrix(A, path) -> None:
    A = np.asarray(A, dtype=float)
    lines = [f"n {A.shape[0]}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in A]
    atomic_write(path, "\n".join(lines) + "\n")


def read_matrix(path, atol: float = 1e-12) -> np.ndarray:
    """Load an ``n <int>`` header followed by ``n`` rows; checks symmetry and zero diagonal."""
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().split()
        if len(head) != 2 or head[0] != "n":
            raise ValueError(f"{path}: first line must be 'n <int>'")
        n = int(head[1])
        rows = [line.split() for line in fh if line.strip()]
    if len(rows) != n or any(len(r) != n for r in rows):
        raise ValueError(f"{path}: expected {n} rows of {n} values")
    A = np.array(rows, dtype=float)
    check_interaction(A, atol=atol)
    return A


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return ";".join(_fmt(u) for u in np.ravel(v))
    return "" if v is None else str(v)


def csv_text(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: {CSV_SCHEMA}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def read_csv(path) -> tuple[list[dict], str]:
    """Rows as string dicts plus the schema tag."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
        if not first.startswith("# schema:"):
            raise ValueError(f"{path}: missing schema header")
        return list(csv.DictReader(fh)), first.split(":", 1)[1].strip()


def write_outputs(csv_path, rows: list[dict], columns: list[str], meta: dict) -> None:
    """Write the CSV and its ``.meta.json`` sidecar (timings live only in the sidecar)."""
    atomic_write(csv_path, csv_text(rows, columns))
    atomic_write(str(csv_path) + ".meta.json", json.dumps(meta, indent=2, sort_keys=True, default=str))


def write_dataset(path, y, t, x) -> None:
    x = np.asarray(x, dtype=float).reshape(len(y), -1)
    cols = ["y", "t"] + [f"x{j + 1}" for j in range(x.shape[1])]
    rows = [dict(zip(cols, [int(a), int(b), *map(float, c)])) for a, b, c in zip(y, t, x)]
    atomic_write(path, csv_text(rows, cols))


def read_dataset(path):
    rows, _ = read_csv(path)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    y = np.array([float(r["y"]) for r in rows])
    t = np.array([float(r["t"]) for r in rows])
    xcols = sorted((c for c in rows[0] if c.startswith("x")), key=lambda c: int(c[1:]))
    x = np.array([[float(r[c]) for c in xcols] for r in rows]).reshape(len(rows), len(xcols))
    return y, t, x
