"""Synthetic attention-map scenes and MIL bags with known ground truth."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import BoundingBox, ParameterError, as_matrix
from .mil import EmbeddingBag


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    rows: int = 64
    cols: int = 64
    blob_count: tuple[int, int] = (1, 3)
    amplitude: tuple[float, float] = (0.3, 1.0)
    sigma: tuple[float, float] = (1.5, 3.0)
    noise: float = 0.02
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "blob_count", tuple(self.blob_count))
        object.__setattr__(self, "amplitude", tuple(self.amplitude))
        object.__setattr__(self, "sigma", tuple(self.sigma))
        if self.rows < 32 or self.cols < 32:
            raise ParameterError("scene dimensions must be at least 32")
        lo, hi = self.blob_count
        if not 0 <= lo <= hi:
            raise ParameterError(f"invalid blob count range {self.blob_count}")
        if not 0 < self.sigma[0] <= self.sigma[1]:
            raise ParameterError(f"invalid sigma range {self.sigma}")
        if not self.amplitude[0] <= self.amplitude[1]:
            raise ParameterError(f"invalid amplitude range {self.amplitude}")
        if self.noise < 0:
            raise ParameterError("noise amplitude must be >= 0")
        margin = 2 * self.sigma[1]
        if min(self.rows, self.cols) - 1 < 2 * margin:
            raise ParameterError("scene too small for the border margin")

    def to_dict(self) -> dict:
        return asdict(self)


def scene_id(index: int) -> str:
    return f"scene_{index:04d}"


def _gaussian(rows, cols, cy, cx, sigma):
    yy = np.arange(rows)[:, None]
    xx = np.arange(cols)[None, :]
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma * sigma))


def generate_scene(cfg: SceneConfig, index: int, max_attempts: int = 1000) -> tuple[np.ndarray, list[BoundingBox]]:
    """Gaussian blobs on uniform noise, one box of half-width ceil(3 sigma) per blob.

    Blob centres are integer pixels at least ``2 * max sigma`` from every
    border and ``4 * max sigma`` from each other.
    """
    rng = np.random.default_rng([cfg.seed, index])
    n = int(rng.integers(cfg.blob_count[0], cfg.blob_count[1] + 1))
    smax = cfg.sigma[1]
    margin = int(math.ceil(2 * smax))
    centers: list[tuple[int, int]] = []
    attempts = 0
    while len(centers) < n:
        attempts += 1
        if attempts > max_attempts:
            raise PlacementError(f"could not place {n} blobs in {max_attempts} attempts")
        cy = int(rng.integers(margin, cfg.rows - margin))
        cx = int(rng.integers(margin, cfg.cols - margin))
        if all(math.hypot(cy - y, cx - x) >= 4 * smax for y, x in centers):
            centers.append((cy, cx))

    sid = scene_id(index)
    m = np.zeros((cfg.rows, cfg.cols))
    boxes = []
    for cy, cx in centers:
        amp = rng.uniform(*cfg.amplitude)
        sigma = rng.uniform(*cfg.sigma)
        m += amp * _gaussian(cfg.rows, cfg.cols, cy, cx, sigma)
        half = int(math.ceil(3 * sigma))
        boxes.append(BoundingBox(
            x0=max(cx - half, 0), y0=max(cy - half, 0),
            x1=min(cx + half + 1, cfg.cols), y1=min(cy + half + 1, cfg.rows),
            slice_id=sid,
        ))
    if cfg.noise > 0:
        m += rng.uniform(0.0, cfg.noise, size=m.shape)
    return as_matrix(np.maximum(m, 0.0)), boxes


def generate_scenes(cfg: SceneConfig, indices) -> tuple[dict[str, np.ndarray], list[BoundingBox]]:
    maps: dict[str, np.ndarray] = {}
    boxes: list[BoundingBox] = []
    for i in indices:
        m, b = generate_scene(cfg, i)
        maps[scene_id(i)] = m
        boxes.extend(b)
    return maps, boxes


@dataclass(frozen=True)
class BagConfig:
    K: int = 16
    M: int = 8
    grid: tuple[int, int] = (4, 4)
    witness_mean: tuple[float, ...] | None = None
    background_mean: tuple[float, ...] | None = None
    background_std: float = 0.5
    witness_std: float = 0.1
    witnesses: tuple[int, int] = (1, 3)
    seed: int = 0

    def __post_init__(self):
        if self.grid[0] * self.grid[1] != self.K:
            raise ParameterError(f"grid {self.grid} does not hold K={self.K} positions")
        wm, bm = self.witness_means()
        if wm.shape != (self.M,) or bm.shape != (self.M,):
            raise ParameterError("mean vectors must have length M")
        if np.max(np.abs(wm - bm)) < 1.0:
            raise ParameterError("witness and background means must differ by >= 1 in some coordinate")
        lo, hi = self.witnesses
        if not 1 <= lo <= hi <= self.K:
            raise ParameterError(f"invalid witness count range {self.witnesses}")

    def witness_means(self) -> tuple[np.ndarray, np.ndarray]:
        bm = np.zeros(self.M) if self.background_mean is None else np.asarray(self.background_mean, float)
        if self.witness_mean is None:
            wm = bm.copy()
            wm[: min(2, self.M)] += 1.5
        else:
            wm = np.asarray(self.witness_mean, float)
        return wm, bm


def generate_bags(cfg: BagConfig, n_pos: int, n_neg: int) -> list[tuple[EmbeddingBag, int]]:
    """Positive bags first, then negative ones; each carries its witness mask."""
    wm, bm = cfg.witness_means()
    out = []
    for i in range(n_pos + n_neg):
        rng = np.random.default_rng([cfg.seed, i])
        label = int(i < n_pos)
        H = bm + cfg.background_std * rng.standard_normal((cfg.K, cfg.M))
        mask = np.zeros(cfg.K, dtype=bool)
        if label:
            n_w = int(rng.integers(cfg.witnesses[0], cfg.witnesses[1] + 1))
            pos = rng.choice(cfg.K, size=n_w, replace=False)
            noise = cfg.witness_std * rng.standard_normal((n_w, cfg.M))
            # keep every witness within 0.45 of the witness mean
            norms = np.linalg.norm(noise, axis=1, keepdims=True)
            noise = np.where(norms > 0.45, noise * (0.45 / np.maximum(norms, 1e-300)), noise)
            H[pos] = wm + noise
            mask[pos] = True
        out.append((EmbeddingBag(H, cfg.grid[0], cfg.grid[1], mask), label))
    return out
