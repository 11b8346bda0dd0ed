"""File formats: Matrix Market for sparse tiles, a small CSV dialect for dense matrices.

Dense CSV layout: the first line holds ``rows,cols``; the following ``rows``
lines hold ``cols`` comma-separated values each.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse

from .matrix import SparseTile, as_dense


def read_mtx(path) -> SparseTile:
    """Read a coordinate Matrix Market file (general/symmetric, real/integer/pattern)."""
    try:
        m = scipy.io.mmread(str(path))
    except (ValueError, OSError) as exc:
        raise ValueError(f"{path}: not a valid Matrix Market file ({exc})") from exc
    if not scipy.sparse.issparse(m):
        m = scipy.sparse.coo_matrix(m)
    m = scipy.sparse.coo_matrix(m)
    m.sum_duplicates()
    rows, cols = m.shape
    return SparseTile.from_entries(rows, cols, zip(m.row, m.col, m.data.astype(np.float64)))


def write_mtx(path, t: SparseTile) -> None:
    """Write ``t`` as ``coordinate real general`` (1-based indices)."""
    buf = io.StringIO()
    buf.write("%%MatrixMarket matrix coordinate real general\n")
    buf.write(f"{t.n_rows} {t.n_cols} {t.nnz}\n")
    for r, c, v in zip(t.rows, t.cols, t.vals):
        buf.write(f"{r + 1} {c + 1} {float(v)!r}\n")
    Path(path).write_text(buf.getvalue())


def read_dense_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
            rows, cols = (int(x) for x in header)
        except (StopIteration, ValueError) as exc:
            raise ValueError(f"{path}:1: expected header 'rows,cols'") from exc
        data = np.empty((rows, cols), dtype=np.float64)
        i = 0
        for lineno, line in enumerate(reader, start=2):
            if not line or all(not x.strip() for x in line):
                continue
            if i >= rows:
                raise ValueError(f"{path}:{lineno}: more than {rows} data rows")
            if len(line) != cols:
                raise ValueError(f"{path}:{lineno}: expected {cols} values, got {len(line)}")
            try:
                data[i] = [float(x) for x in line]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            i += 1
    if i != rows:
        raise ValueError(f"{path}: header declares {rows} rows, found {i}")
    return as_dense(data, str(path))


def write_dense_csv(path, m) -> None:
    m = np.asarray(m)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([m.shape[0], m.shape[1]])
        for row in m:
            w.writerow([repr(float(x)) for x in row])
