"""Point-in-box matching and Dice / sensitivity / PPV."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

from .core import BoundingBox, Detection, EvalCounts


@dataclass(frozen=True)
class MetricsReport:
    ppv: float
    se: float
    dice: float
    counts: EvalCounts
    # True when any metric had a zero denominator and was reported as 0
    degenerate: bool = False

    def to_dict(self, percent: bool = True) -> dict:
        scale = 100.0 if percent else 1.0
        return {
            "tp": self.counts.tp,
            "fp": self.counts.fp,
            "fn": self.counts.fn,
            "ppv": round(self.ppv * scale, 2) if percent else self.ppv,
            "se": round(self.se * scale, 2) if percent else self.se,
            "dice": round(self.dice * scale, 2) if percent else self.dice,
        }


def match_slice(detections: Sequence[Detection], boxes: Sequence[BoundingBox]) -> EvalCounts:
    """Count TP/FP per detection and FN per box for a single slice.

    A detection inside any box is a TP (several detections in one box are each
    a TP); a detection inside no box is a FP; a box holding no detection is a FN.
    """
    ids = {d.slice_id for d in detections} | {b.slice_id for b in boxes}
    if len(ids) > 1:
        raise ValueError(f"match_slice got mixed slice ids: {sorted(ids)}")
    hit = [False] * len(boxes)
    tp = fp = 0
    for det in detections:
        inside = False
        for i, box in enumerate(boxes):
            if box.contains(det.x, det.y):
                hit[i] = True
                inside = True
        if inside:
            tp += 1
        else:
            fp += 1
    return EvalCounts(tp=tp, fp=fp, fn=hit.count(False))


def aggregate(counts: Iterable[EvalCounts]) -> EvalCounts:
    total = EvalCounts()
    for c in counts:
        total = total + c
    return total


def report(counts: EvalCounts) -> MetricsReport:
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    degenerate = False

    def ratio(num, den):
        nonlocal degenerate
        if den == 0:
            degenerate = True
            return 0.0
        return num / den

    ppv = ratio(tp, tp + fp)
    se = ratio(tp, tp + fn)
    dice = ratio(2 * tp, 2 * tp + fp + fn)
    return MetricsReport(ppv=ppv, se=se, dice=dice, counts=counts, degenerate=degenerate)


def evaluate_slices(
    detections: Iterable[Detection],
    boxes: Iterable[BoundingBox],
    slice_ids: Iterable[str] | None = None,
) -> dict[str, EvalCounts]:
    """Per-slice counts; a slice with detections but no boxes is all FP.

    ``slice_ids`` adds slices that may have neither detections nor boxes.
    """
    by_det: dict[str, list[Detection]] = defaultdict(list)
    by_box: dict[str, list[BoundingBox]] = defaultdict(list)
    for d in detections:
        by_det[d.slice_id].append(d)
    for b in boxes:
        by_box[b.slice_id].append(b)
    ids = set(by_det) | set(by_box) | set(slice_ids or ())
    return {sid: match_slice(by_det.get(sid, []), by_box.get(sid, [])) for sid in sorted(ids)}


def dice_score(detections, boxes) -> float:
    return report(aggregate(evaluate_slices(detections, boxes).values())).dice
