"""CSV artifacts: atomic writer, reader, and norm-based comparison."""

from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import ColumnMismatch

T_MATCH_TOL = 1e-12


def _fmt(v) -> str:
    return "%.17g" % v


def write_csv(path, header, rows, meta: dict | None = None) -> None:
    """Write ``rows`` (2-D) under ``header``; an optional ``# k=v ...`` line goes first.

    The file appears atomically: data goes to a temp file in the same
    directory which is then renamed over ``path``.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[1] != len(header):
        raise ValueError(f"{len(header)} header names for {rows.shape[1]} columns")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", suffix=".csv", dir=directory)
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            if meta:
                fh.write("# " + " ".join(f"{k}={_fmt(v) if isinstance(v, float) else v}"
                                         for k, v in meta.items()) + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_csv(path) -> tuple[list, np.ndarray, dict]:
    """Return (header, data, meta) where meta comes from ``# k=v`` lines."""
    meta, header, data = {}, None, []
    with open(path, newline="", encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                for item in line[1:].split():
                    if "=" in item:
                        k, v = item.split("=", 1)
                        meta[k] = v
                continue
            if not line.strip():
                continue
            fields = next(csv.reader([line]))
            if header is None:
                header = [f.strip() for f in fields]
            else:
                data.append([float(f) for f in fields])
    if header is None:
        raise ColumnMismatch(f"{path}: no header row")
    arr = np.array(data, dtype=float).reshape(-1, len(header))
    return header, arr, meta


def trajectory_csv(path, t, blocks: dict) -> None:
    """Columns ``t`` then each named block.

    A 1-D block is one column under its own name; a 2-D block of width k
    becomes name1..namek.
    """
    header, cols = ["t"], [np.asarray(t, dtype=float)[:, None]]
    for name, values in blocks.items():
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            header.append(name)
            v = v[:, None]
        else:
            header += [f"{name}{j + 1}" for j in range(v.shape[1])]
        cols.append(v)
    write_csv(path, header, np.hstack(cols))


@dataclass(frozen=True)
class CompareReport:
    norm: str
    columns: dict
    aggregate: float
    interpolated: bool

    def summary(self) -> str:
        per = " ".join(f"{k}={v:.6g}" for k, v in self.columns.items())
        how = " interpolated" if self.interpolated else ""
        return f"{self.norm}={self.aggregate:.6g} {per}{how}"


def compare_csv(a, b, norm: str = "sup", columns=None, window=None) -> CompareReport:
    """Per-column and aggregate differences between two files sharing a ``t`` column.

    When the time columns differ, ``b`` is linearly interpolated onto the
    ``a`` samples inside the common time range. ``window=(lo, hi)`` restricts
    the comparison to lo <= t <= hi.
    """
    if norm not in ("sup", "l2"):
        raise ValueError(f"unknown norm '{norm}'")
    ha, da, _ = read_csv(a)
    hb, db, _ = read_csv(b)
    if not ha or ha[0] != "t" or hb[0] != "t":
        raise ColumnMismatch("both files need 't' as their first column")
    if columns is None:
        if ha != hb:
            raise ColumnMismatch(f"headers differ: {ha} vs {hb}")
        columns = ha[1:]
    for name in columns:
        if name not in ha or name not in hb:
            raise ColumnMismatch(f"column '{name}' missing from "
                                 f"{'first' if name not in ha else 'second'} file")
    ta, tb = da[:, 0], db[:, 0]
    same = ta.shape == tb.shape and np.all(np.abs(ta - tb) <= T_MATCH_TOL)
    if same:
        keep = np.ones(ta.size, dtype=bool)
    else:
        keep = (ta >= tb.min() - T_MATCH_TOL) & (ta <= tb.max() + T_MATCH_TOL)
        if keep.sum() < 2:
            raise ColumnMismatch("time ranges do not overlap")
    if window is not None:
        keep &= (ta >= window[0]) & (ta <= window[1])
        if not keep.any():
            raise ColumnMismatch("no samples inside the comparison window")
    t = ta[keep]
    per = {}
    for name in columns:
        va = da[keep, ha.index(name)]
        vb = db[:, hb.index(name)]
        vb = vb[keep] if same else np.interp(t, tb, vb)
        diff = va - vb
        if norm == "sup":
            per[name] = float(np.max(np.abs(diff)))
        else:
            per[name] = float(np.sqrt(np.trapezoid(diff ** 2, t))) if t.size > 1 else 0.0
    values = np.array(list(per.values()))
    agg = float(values.max()) if norm == "sup" else float(np.sqrt(np.sum(values ** 2)))
    return CompareReport(norm, per, agg, not same)
