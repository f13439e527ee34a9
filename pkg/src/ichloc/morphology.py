"""Peak detector for attention maps.

Pipeline: h-maxima transform (reconstruction by dilation of ``map - h`` under
``map``) -> local-maximum candidates where the map equals its grayscale
dilation -> one peak per 8-connected candidate plateau -> value threshold ->
greedy minimum-distance suppression.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import Detection, DetectorParams, ParameterError, ShapeError, as_matrix

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class Footprint:
    radius: int = 1

    def __post_init__(self):
        if int(self.radius) != self.radius or self.radius < 1:
            raise ParameterError(f"footprint radius must be an integer >= 1, got {self.radius!r}")

    @property
    def size(self) -> int:
        return 2 * self.radius + 1


@dataclass(frozen=True)
class Peak:
    x: int
    y: int
    value: float


def gray_dilate(m, f: Footprint = Footprint()) -> np.ndarray:
    """Square maximum filter; the window is clipped at the borders."""
    m = as_matrix(m)
    # edge replication never introduces a value absent from the clipped window
    return ndimage.maximum_filter(m, size=f.size, mode="nearest")


def morph_reconstruct_dilation(marker, mask) -> np.ndarray:
    """Grayscale reconstruction by dilation, iterated to the exact fixed point."""
    marker = as_matrix(marker, "marker")
    mask = as_matrix(mask, "mask")
    if marker.shape != mask.shape:
        raise ShapeError(f"marker {marker.shape} and mask {mask.shape} differ in shape")
    if np.any(marker > mask):
        raise ValueError("reconstruction requires marker <= mask everywhere")
    r = marker.copy()
    while True:
        nxt = np.minimum(_dilate3(r), mask)
        if np.array_equal(nxt, r):
            return as_matrix(r)
        r = nxt


def _dilate3(r: np.ndarray) -> np.ndarray:
    # separable 3x3 maximum with clipped borders
    t = r.copy()
    np.maximum(t[1:], r[:-1], out=t[1:])
    np.maximum(t[:-1], r[1:], out=t[:-1])
    u = t.copy()
    np.maximum(u[:, 1:], t[:, :-1], out=u[:, 1:])
    np.maximum(u[:, :-1], t[:, 1:], out=u[:, :-1])
    return u


def h_maxima(m, h: float) -> np.ndarray:
    """Suppress every regional maximum whose prominence is below ``h``."""
    if not h >= 0:
        raise ParameterError(f"h must be >= 0, got {h!r}")
    m = as_matrix(m)
    if h == 0:
        return m
    return morph_reconstruct_dilation(m - h, m)


def _label_candidates(m: np.ndarray, f: Footprint):
    cand = m == gray_dilate(m, f)
    return ndimage.label(cand, structure=_EIGHT)


def local_maxima(m, f: Footprint = Footprint()) -> list[np.ndarray]:
    """8-connected plateaus of pixels equal to their neighbourhood maximum.

    Each component is returned as an (n, 2) array of ``(row, col)`` indices in
    row-major order; components are ordered by their first pixel.
    """
    m = as_matrix(m)
    labels, n = _label_candidates(m, f)
    if n == 0:
        return []
    flat = labels.ravel()
    order = np.argsort(flat, kind="stable")
    bounds = np.cumsum(np.bincount(flat, minlength=n + 1))
    cols = m.shape[1]
    comps = []
    for lab in range(1, n + 1):
        idx = order[bounds[lab - 1]:bounds[lab]]
        comps.append(np.column_stack((idx // cols, idx % cols)))
    return comps


def plateau_peaks(m, f: Footprint = Footprint()) -> list[Peak]:
    """One peak per candidate plateau at its centroid, rounded half up.

    Plateau pixels all share one value (two adjacent candidates bound each
    other from above), so the value of the first pixel is the plateau value.
    """
    m = as_matrix(m)
    labels, n = _label_candidates(m, f)
    if n == 0:
        return []
    flat = labels.ravel()
    rows, cols = np.indices(m.shape)
    counts = np.bincount(flat, minlength=n + 1)[1:]
    cy = np.bincount(flat, weights=rows.ravel(), minlength=n + 1)[1:] / counts
    cx = np.bincount(flat, weights=cols.ravel(), minlength=n + 1)[1:] / counts
    _, first = np.unique(flat, return_index=True)
    values = m.ravel()[first[1:] if flat[first[0]] == 0 else first]
    ys = np.floor(cy + 0.5).astype(int)
    xs = np.floor(cx + 0.5).astype(int)
    return [Peak(int(x), int(y), float(v)) for x, y, v in zip(xs, ys, values)]


def select_peaks(peaks, T: float, d: float) -> list[Peak]:
    """Threshold on value then greedy suppression within distance ``d``.

    Peaks are visited by value descending, ties broken row-major; a peak is
    accepted iff it lies at least ``d`` from every peak accepted before it.
    """
    kept = sorted((p for p in peaks if p.value > T), key=lambda p: (-p.value, p.y, p.x))
    if d <= 1:
        # distinct integer points are always >= 1 apart
        seen: set[tuple[int, int]] = set()
        accepted = []
        for p in kept:
            if (p.x, p.y) not in seen:
                seen.add((p.x, p.y))
                accepted.append(p)
        return accepted
    accepted = []
    d2 = d * d
    # bucket accepted peaks on a grid of cell size d; only the 3x3 cell
    # neighbourhood can hold a peak closer than d
    cells: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for p in kept:
        x, y = p.x, p.y
        cx, cy = int(x // d), int(y // d)
        ok = True
        for i in (cx - 1, cx, cx + 1):
            for j in (cy - 1, cy, cy + 1):
                for qx, qy in cells.get((i, j), ()):
                    if (x - qx) ** 2 + (y - qy) ** 2 < d2:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            accepted.append(p)
            cells.setdefault((cx, cy), []).append((x, y))
    return accepted


def candidate_peaks(m, h: float, f: Footprint = Footprint()) -> list[Peak]:
    """The h-dependent half of the detector, cacheable across (T, d)."""
    return plateau_peaks(h_maxima(m, h), f)


def detect_peaks(m, params: DetectorParams, f: Footprint = Footprint(), slice_id: str = "") -> list[Detection]:
    peaks = select_peaks(candidate_peaks(m, params.h, f), params.T, params.d)
    return [Detection(x=p.x, y=p.y, score=p.value, slice_id=slice_id) for p in peaks]
