"""Glue between detector, metrics and the optimizer."""
from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import BoundingBox, Detection, DetectorParams
from .metrics import aggregate, evaluate_slices, report
from .morphology import Footprint, Peak, candidate_peaks, detect_peaks, select_peaks


def split_fraction(slice_id: str) -> float:
    """Stable pseudo-random number in [0, 1) derived from the slice id."""
    digest = hashlib.sha256(slice_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


def split_ids(slice_ids: Iterable[str], tune_fraction: float = 0.4) -> tuple[list[str], list[str]]:
    tune, test = [], []
    for sid in sorted(slice_ids):
        (tune if split_fraction(sid) < tune_fraction else test).append(sid)
    return tune, test


def detect_all(
    maps: Mapping[str, np.ndarray],
    params: DetectorParams,
    footprint: Footprint = Footprint(),
    jobs: int = 1,
) -> list[Detection]:
    """Detections over many maps, ordered by slice id then score."""
    ids = sorted(maps)

    def run(sid):
        return detect_peaks(maps[sid], params, footprint, slice_id=sid)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, ids))
    else:
        results = [run(sid) for sid in ids]
    return [d for per_slice in results for d in per_slice]


class DiceObjective:
    """Dice of the detector over a tuning set, as a function of (h, T, d).

    The h-maxima stage only depends on ``h``, so its candidate peaks are
    cached per (slice, h).
    """

    def __init__(self, maps: Mapping[str, np.ndarray], boxes: Sequence[BoundingBox], footprint: Footprint = Footprint()):
        self.maps = dict(maps)
        self.boxes = [b for b in boxes if b.slice_id in self.maps]
        self.footprint = footprint
        self._cache: dict[float, dict[str, list[Peak]]] = {}

    def candidates(self, h: float) -> dict[str, list[Peak]]:
        if h not in self._cache:
            self._cache[h] = {sid: candidate_peaks(m, h, self.footprint) for sid, m in self.maps.items()}
        return self._cache[h]

    def detections(self, params: DetectorParams) -> list[Detection]:
        cands = self.candidates(params.h)
        out = []
        for sid in sorted(cands):
            out += [Detection(p.x, p.y, p.value, sid) for p in select_peaks(cands[sid], params.T, params.d)]
        return out

    def __call__(self, point: Mapping[str, float]) -> float:
        params = DetectorParams(h=point["h"], T=point["T"], d=point["d"])
        per_slice = evaluate_slices(self.detections(params), self.boxes, self.maps.keys())
        return report(aggregate(per_slice.values())).dice
