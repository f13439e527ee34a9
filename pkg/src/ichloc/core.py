"""Shared containers and error types.

Matrices are plain 2-D ``float64`` numpy arrays. ``as_matrix`` is the single
gate every public entry point passes its inputs through; it rejects anything
that is not 2-D, non-empty and finite. Coordinates follow image ordering:
``x`` is the column index, ``y`` the row index, origin at the top-left.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class FormatError(ValueError):
    """Malformed file content; the message names the line or byte offset."""


class ShapeError(ValueError):
    pass


class ParameterError(ValueError):
    pass


class DegenerateDatasetError(ValueError):
    pass


class NumericalError(ArithmeticError):
    pass


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Validate and convert ``values`` to a read-only 2-D float64 array."""
    m = np.array(values, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"{name} must have at least one row and column, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite values")
    m.flags.writeable = False
    return m


def _check_finite(name: str, value: float) -> None:
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned ground-truth box, half-open: [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int
    slice_id: str

    def __post_init__(self):
        for name in ("x0", "y0", "x1", "y1"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v:
                raise ValueError(f"{name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if min(self.x0, self.y0, self.x1, self.y1) < 0:
            raise ValueError(f"box coordinates must be non-negative: {self}")
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"box requires x0 < x1 and y0 < y1: {self}")

    def contains(self, x: int, y: int) -> bool:
        return self.x0 <= x < self.x1 and self.y0 <= y < self.y1


@dataclass(frozen=True)
class Detection:
    x: int
    y: int
    score: float
    slice_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "x", int(self.x))
        object.__setattr__(self, "y", int(self.y))
        object.__setattr__(self, "score", float(self.score))
        _check_finite("score", self.score)
        if self.x < 0 or self.y < 0:
            raise ValueError(f"detection coordinates must be non-negative: {self}")

    def to_dict(self) -> dict:
        return {"slice_id": self.slice_id, "x": self.x, "y": self.y, "score": self.score}


@dataclass(frozen=True)
class DetectorParams:
    """Peak detector settings.

    h is the minimum peak prominence, T the value a peak must exceed and d the
    minimum Euclidean distance (pixels) between accepted peaks.
    """

    h: float
    T: float
    d: float

    def __post_init__(self):
        for name in ("h", "T", "d"):
            v = float(getattr(self, name))
            _check_finite(name, v)
            object.__setattr__(self, name, v)
        if self.h < 0:
            raise ParameterError(f"h must be >= 0, got {self.h}")
        if self.d < 1:
            raise ParameterError(f"d must be >= 1, got {self.d}")


@dataclass(frozen=True)
class EvalCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "fn"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")
            object.__setattr__(self, name, int(v))

    def __add__(self, other: "EvalCounts") -> "EvalCounts":
        return EvalCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)
