"""File formats: amap/CSV matrices, boxes CSV and detections JSON.

amap layout (little-endian, no padding)::

    b"AMAP1\\n" | rows:uint32 | cols:uint32 | rows*cols float64, row-major

Matrix CSV is one row per line, comma separated, LF endings, no header.
Floats are written with ``repr`` (shortest string that round-trips).
"""
from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import BoundingBox, Detection, FormatError, as_matrix

AMAP_MAGIC = b"AMAP1\n"
_HEADER = struct.Struct("<II")
BOX_HEADER = ["slice_id", "x0", "y0", "x1", "y1"]


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in ("amap", "csv"):
            raise ValueError(f"unknown matrix format {fmt!r}")
        return fmt
    suffix = path.suffix.lower()
    if suffix == ".amap":
        return "amap"
    if suffix == ".csv":
        return "csv"
    raise ValueError(f"cannot infer matrix format from {path.name!r}")


def _atomic_write(path: Path, data: bytes) -> None:
    # temp file in the destination directory so os.replace stays atomic
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_amap(m) -> bytes:
    m = as_matrix(m)
    rows, cols = m.shape
    return AMAP_MAGIC + _HEADER.pack(rows, cols) + m.astype("<f8").tobytes(order="C")


def decode_amap(data: bytes, source: str = "<bytes>") -> np.ndarray:
    n_magic = len(AMAP_MAGIC)
    if data[:n_magic] != AMAP_MAGIC:
        raise FormatError(f"{source}: bad magic at offset 0")
    if len(data) < n_magic + _HEADER.size:
        raise FormatError(f"{source}: truncated header at offset {len(data)}")
    rows, cols = _HEADER.unpack_from(data, n_magic)
    if rows == 0 or cols == 0:
        raise FormatError(f"{source}: empty dimensions {rows}x{cols} at offset {n_magic}")
    start = n_magic + _HEADER.size
    expected = start + 8 * rows * cols
    if len(data) != expected:
        raise FormatError(
            f"{source}: dimension mismatch, header says {rows}x{cols} "
            f"({expected} bytes) but file has {len(data)} bytes"
        )
    values = np.frombuffer(data, dtype="<f8", offset=start).astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise FormatError(f"{source}: non-finite value at offset {start + 8 * int(bad[0])}")
    return as_matrix(values.reshape(rows, cols))


def format_float(v: float) -> str:
    return repr(float(v))


def encode_csv(m) -> str:
    m = as_matrix(m)
    return "".join(",".join(format_float(v) for v in row) + "\n" for row in m)


def decode_csv(text: str, source: str = "<text>", shape: tuple[int, int] | None = None) -> np.ndarray:
    rows: list[list[float]] = []
    ncols = shape[1] if shape is not None else None
    for lineno, line in enumerate(text.split("\n"), start=1):
        line = line.rstrip("\r")
        if not line.strip():
            continue
        fields = line.split(",")
        if ncols is None:
            ncols = len(fields)
        if len(fields) != ncols:
            raise FormatError(
                f"{source}: dimension mismatch on line {lineno}: "
                f"expected {ncols} values, got {len(fields)}"
            )
        row = []
        for f in fields:
            try:
                v = float(f)
            except ValueError:
                raise FormatError(f"{source}: unparseable value {f.strip()!r} on line {lineno}") from None
            if not math.isfinite(v):
                raise FormatError(f"{source}: non-finite value on line {lineno}")
            row.append(v)
        rows.append(row)
    if not rows:
        raise FormatError(f"{source}: no data rows")
    if shape is not None and len(rows) != shape[0]:
        raise FormatError(f"{source}: dimension mismatch, expected {shape[0]} rows, got {len(rows)}")
    return as_matrix(rows)


def read_matrix(path, fmt: str | None = None, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Read a matrix file.

    ``fmt`` defaults to the file suffix. For CSV, ``shape`` (or a sidecar
    ``<file>.json`` holding ``{"rows": .., "cols": ..}``) declares the expected
    dimensions; without either the column count of the first line is used.
    """
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "amap":
        return decode_amap(path.read_bytes(), str(path))
    if shape is None:
        sidecar = path.with_name(path.name + ".json")
        if sidecar.exists():
            meta = json.loads(sidecar.read_text())
            shape = (int(meta["rows"]), int(meta["cols"]))
    return decode_csv(path.read_text(encoding="utf-8"), str(path), shape)


def write_matrix(m, path, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = _infer_format(path, fmt)
    data = encode_amap(m) if fmt == "amap" else encode_csv(m).encode("utf-8")
    _atomic_write(path, data)


def read_boxes(path) -> list[BoundingBox]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    reader = csv.reader(_io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError(f"{path}: missing header line") from None
    if [h.strip() for h in header] != BOX_HEADER:
        raise FormatError(f"{path}: header must be {','.join(BOX_HEADER)}, got {','.join(header)}")
    boxes = []
    for rowno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 5:
            raise FormatError(f"{path}: row {rowno} has {len(row)} fields, expected 5")
        try:
            coords = [int(c) for c in row[1:]]
            boxes.append(BoundingBox(coords[0], coords[1], coords[2], coords[3], row[0]))
        except ValueError as exc:
            raise FormatError(f"{path}: row {rowno}: {exc}") from None
    return boxes


def write_boxes(boxes: Iterable[BoundingBox], path) -> None:
    lines = [",".join(BOX_HEADER)]
    lines += [f"{b.slice_id},{b.x0},{b.y0},{b.x1},{b.y1}" for b in boxes]
    _atomic_write(Path(path), ("\n".join(lines) + "\n").encode("utf-8"))


def detections_to_json(detections: Sequence[Detection]) -> str:
    return json.dumps([d.to_dict() for d in detections], indent=1) + "\n"


def read_detections(path) -> list[Detection]:
    path = Path(path)
    try:
        records = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(records, list):
        raise FormatError(f"{path}: detections must be a JSON array")
    out = []
    for i, r in enumerate(records):
        try:
            out.append(Detection(x=r["x"], y=r["y"], score=r["score"], slice_id=str(r["slice_id"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: record {i}: {exc}") from None
    return out


def write_detections(detections: Sequence[Detection], path) -> None:
    _atomic_write(Path(path), detections_to_json(detections).encode("utf-8"))


def write_json(obj, path) -> None:
    _atomic_write(Path(path), (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def read_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
