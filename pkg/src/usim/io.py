"""Matrix ingestion (CSV and raw float64), report and table serialization.

Raw float64 layout: the 8-byte ASCII magic ``USIMMAT0``, then ``n`` and ``d``
as little-endian uint32, then ``n * d`` little-endian float64 values in
row-major order. Labels for a raw file live in a sibling text file
``<path>.labels`` with one integer per line.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .core import RepresentationSet, SimilarityReport
from .errors import NonFiniteValue, ParseError, ShapeMismatch

MAGIC = b"USIMMAT0"
HEADER = struct.Struct("<8sII")
CSV_FORMAT = "%.17g"


@dataclass(frozen=True)
class MatrixFile:
    path: Path
    format: str = "auto"  # "csv", "raw", or "auto" (by extension)
    shape: Optional[tuple] = None
    label_col: Optional[Union[str, int]] = None

    def resolved_format(self) -> str:
        if self.format != "auto":
            return self.format
        return "csv" if Path(self.path).suffix.lower() in (".csv", ".txt") else "raw"


def atomic_write(path, data: Union[bytes, str]) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def labels_path(path) -> Path:
    return Path(str(path) + ".labels")


# ---------------------------------------------------------------- raw float64


def encode_raw(data: np.ndarray) -> bytes:
    data = np.asarray(data, dtype="<f8")
    n, d = data.shape
    return HEADER.pack(MAGIC, n, d) + np.ascontiguousarray(data).tobytes()


def decode_raw(blob: bytes, name: str = "<raw>") -> np.ndarray:
    if len(blob) < HEADER.size:
        raise ParseError(f"{name}: file shorter than the {HEADER.size}-byte header", offset=len(blob))
    magic, n, d = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ParseError(f"{name}: bad magic {magic!r}", offset=0)
    expected = 8 * n * d
    payload = len(blob) - HEADER.size
    if payload != expected:
        raise ShapeMismatch(f"{name}: header says {n}x{d} ({expected} bytes) but payload has {payload} bytes")
    data = np.frombuffer(blob, dtype="<f8", offset=HEADER.size).reshape(n, d).astype(np.float64)
    bad = np.argwhere(~np.isfinite(data))
    if bad.size:
        r, c = (int(v) for v in bad[0])
        raise NonFiniteValue(f"{name}: non-finite value at row {r}, col {c}", row=r, col=c)
    return data


def _read_labels_file(path: Path) -> np.ndarray:
    out = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            out.append(int(line))
        except ValueError:
            raise ParseError(f"{path}: line {lineno}: label {line!r} is not an integer", line=lineno) from None
    return np.asarray(out, dtype=np.int64)


# ---------------------------------------------------------------- csv


def _parse_csv(text: str, name: str, label_col):
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        raise ParseError(f"{name}: empty file", line=1)
    header = None
    first = rows[0]
    try:
        [float(c) for c in first]
    except ValueError:
        header = [c.strip() for c in first]
        rows = rows[1:]
    width = len(header) if header else len(rows[0])

    label_idx = None
    if label_col is not None:
        if isinstance(label_col, str) and not label_col.lstrip("-").isdigit():
            if header is None or label_col not in header:
                raise ParseError(f"{name}: label column {label_col!r} not found in header", line=1)
            label_idx = header.index(label_col)
        else:
            label_idx = int(label_col) % width

    values, labels = [], []
    line_offset = 2 if header else 1
    for i, row in enumerate(rows):
        lineno = i + line_offset
        if len(row) != width:
            raise ParseError(f"{name}: line {lineno}: expected {width} cells, got {len(row)}", line=lineno)
        out = []
        for j, cell in enumerate(row):
            cell = cell.strip()
            if j == label_idx:
                try:
                    labels.append(int(float(cell)))
                except ValueError:
                    raise ParseError(f"{name}: line {lineno}: bad label {cell!r}", line=lineno) from None
                continue
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"{name}: line {lineno}, column {j}: cannot parse {cell!r}", line=lineno) from None
            if not math.isfinite(v):
                col = j if label_idx is None or j < label_idx else j - 1
                raise NonFiniteValue(f"{name}: non-finite value {cell!r} at row {i}, col {col}", row=i, col=col)
            out.append(v)
        values.append(out)
    data = np.asarray(values, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ParseError(f"{name}: no data rows", line=line_offset)
    return data, (np.asarray(labels, dtype=np.int64) if label_idx is not None else None)


def format_csv(data: np.ndarray, labels=None, columns=None, label_name: str = "label") -> str:
    data = np.asarray(data, dtype=np.float64)
    names = list(columns) if columns else [f"f{j}" for j in range(data.shape[1])]
    buf = io.StringIO()
    header = names + ([label_name] if labels is not None else [])
    buf.write(",".join(header) + "\n")
    for i, row in enumerate(data):
        cells = [CSV_FORMAT % v for v in row]
        if labels is not None:
            cells.append(str(int(labels[i])))
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()


# ---------------------------------------------------------------- public API


def load_matrix(spec: Union[MatrixFile, str, Path], label_col=None, name: Optional[str] = None) -> RepresentationSet:
    """Load a representation from CSV or raw float64."""
    if not isinstance(spec, MatrixFile):
        spec = MatrixFile(Path(spec), label_col=label_col)
    path = Path(spec.path)
    name = name or path.stem
    fmt = spec.resolved_format()
    if fmt == "csv":
        data, labels = _parse_csv(path.read_text(encoding="utf-8"), str(path), spec.label_col)
    elif fmt == "raw":
        data = decode_raw(path.read_bytes(), str(path))
        lp = labels_path(path)
        labels = _read_labels_file(lp) if lp.exists() else None
        if labels is not None and labels.size != data.shape[0]:
            raise ShapeMismatch(f"{lp}: {labels.size} labels for {data.shape[0]} rows")
    else:
        raise ValueError(f"unknown matrix format {fmt!r}")
    if spec.shape is not None and tuple(data.shape) != tuple(spec.shape):
        raise ShapeMismatch(f"{path}: expected shape {tuple(spec.shape)}, got {data.shape}")
    return RepresentationSet(data, labels, name)


def save_matrix(r: RepresentationSet, path, fmt: str = "auto") -> None:
    path = Path(path)
    fmt = MatrixFile(path, fmt).resolved_format()
    if fmt == "csv":
        atomic_write(path, format_csv(r.data, r.labels))
    else:
        atomic_write(path, encode_raw(r.data))
        if r.labels is not None:
            atomic_write(labels_path(path), "".join(f"{int(v)}\n" for v in r.labels))


def _json_default(obj):
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _clean(obj):
    """Replace non-finite floats with None so the JSON stays standard."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, default=_json_default) + "\n"


def write_report(report: Union[SimilarityReport, list], path) -> None:
    reports = report if isinstance(report, list) else [report]
    payload = [r.to_dict() for r in reports]
    atomic_write(path, dumps(payload if isinstance(report, list) else payload[0]))


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "" if not math.isfinite(v) else CSV_FORMAT % v
    return str(v)


def format_table(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in columns])
    return buf.getvalue()


def write_experiment(result, out_dir) -> list:
    """Write the main table, any extra tables and the JSON summary; returns the paths."""
    out_dir = Path(out_dir)
    written = []
    main = out_dir / f"{result.experiment}.csv"
    atomic_write(main, format_table(result.table.columns, result.table.rows))
    written.append(main)
    for name in sorted(result.extra):
        table = result.extra[name]
        p = out_dir / f"{result.experiment}_{name}.csv"
        atomic_write(p, format_table(table.columns, table.rows))
        written.append(p)
    summary = out_dir / f"{result.experiment}_summary.json"
    atomic_write(summary, dumps(result.summary()))
    written.append(summary)
    return written
