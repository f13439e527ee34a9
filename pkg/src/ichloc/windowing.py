"""Radiological windowing and dataset standardization of CT slices."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DegenerateDatasetError, ParameterError, as_matrix


@dataclass(frozen=True)
class WindowSpec:
    level: float
    width: float

    def __post_init__(self):
        if not np.isfinite(self.level) or not np.isfinite(self.width):
            raise ParameterError("window level and width must be finite")
        if self.width <= 0:
            raise ParameterError(f"window width must be > 0, got {self.width}")


BRAIN_WINDOW = WindowSpec(level=40.0, width=80.0)
SUBDURAL_WINDOW = WindowSpec(level=50.0, width=130.0)


@dataclass(frozen=True)
class StandardizationStats:
    mean: float
    std: float

    def __post_init__(self):
        if not np.isfinite(self.mean) or not np.isfinite(self.std):
            raise ParameterError("mean and std must be finite")
        if self.std <= 0:
            raise ParameterError(f"std must be > 0, got {self.std}")

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std}

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizationStats":
        return cls(mean=float(d["mean"]), std=float(d["std"]))


def apply_window(hu, w: WindowSpec) -> np.ndarray:
    """Linear window ramp clamped to [0, 1].

    ``level - width/2`` maps to 0 and ``level + width/2`` to 1.
    """
    hu = as_matrix(hu, "hu")
    lower = w.level - w.width / 2
    return as_matrix(np.clip((hu - lower) / w.width, 0.0, 1.0))


def standardize(m, stats: StandardizationStats) -> np.ndarray:
    m = as_matrix(m)
    return as_matrix((m - stats.mean) / stats.std)


def compute_stats(dataset: Sequence) -> StandardizationStats:
    """Global mean and population std over every pixel of every matrix."""
    if len(dataset) == 0:
        raise DegenerateDatasetError("dataset is empty")
    flat = np.concatenate([as_matrix(m).ravel() for m in dataset])
    if flat.size < 2:
        raise DegenerateDatasetError("need at least 2 pixels to compute statistics")
    mean = float(flat.mean())
    std = float(np.sqrt(np.mean((flat - mean) ** 2)))
    if std == 0.0:
        raise DegenerateDatasetError("dataset is constant (std = 0)")
    return StandardizationStats(mean=mean, std=std)


def window_channels(hu, windows: Sequence[WindowSpec] = (BRAIN_WINDOW, SUBDURAL_WINDOW)) -> list[np.ndarray]:
    """Raw slice followed by one windowed copy per window, not standardized."""
    hu = as_matrix(hu, "hu")
    return [hu] + [apply_window(hu, w) for w in windows]


def build_input_channels(hu, stats, windows: Sequence[WindowSpec] = (BRAIN_WINDOW, SUBDURAL_WINDOW)) -> list[np.ndarray]:
    """Three-channel network input: raw, brain-windowed, subdural-windowed.

    Windowing happens before standardization. ``stats`` is either one
    ``StandardizationStats`` shared by all channels or one per channel.
    """
    channels = window_channels(hu, windows)
    if isinstance(stats, StandardizationStats):
        stats = [stats] * len(channels)
    if len(stats) != len(channels):
        raise ParameterError(f"expected {len(channels)} per-channel stats, got {len(stats)}")
    return [standardize(c, s) for c, s in zip(channels, stats)]


def compute_channel_stats(dataset: Sequence, windows: Sequence[WindowSpec] = (BRAIN_WINDOW, SUBDURAL_WINDOW)) -> list[StandardizationStats]:
    per_slice = [window_channels(hu, windows) for hu in dataset]
    return [compute_stats([chans[i] for chans in per_slice]) for i in range(len(windows) + 1)]
