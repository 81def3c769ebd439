"""Per-class average precision over rotated BEV IoU."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..geometry import BoxBEV, rotated_iou
from .scenario import CLASSES, Scenario, split_by_class

THRESHOLDS = (0.5, 0.7)


def match_frame(preds: Sequence[BoxBEV], gts: Sequence[BoxBEV], thr: float) -> list[tuple[float, bool]]:
    """Greedy matching by descending score; each GT is claimed at most once,
    by the highest-IoU unmatched GT at or above ``thr``."""
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
    taken = [False] * len(gts)
    out = []
    for i in order:
        p = preds[i]
        best, best_j = thr, -1
        for j, g in enumerate(gts):
            if taken[j]:
                continue
            iou = rotated_iou(p, g)
            if iou >= best:
                best, best_j = iou, j
        if best_j >= 0:
            taken[best_j] = True
        out.append((p.score, best_j >= 0))
    return out


def average_precision(matches: Sequence[tuple[float, bool]], n_gt: int) -> float:
    """All-point interpolated AP. With no ground truth, AP is 1 if there are
    also no detections and 0 otherwise."""
    if n_gt == 0:
        return 0.0 if len(matches) else 1.0
    if not matches:
        return 0.0
    # stable sort keeps frame order for equal scores
    order = sorted(range(len(matches)), key=lambda i: -matches[i][0])
    tp = np.array([matches[i][1] for i in order], dtype=np.float64)
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(tp) + 1)
    mpre = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * mpre))


@dataclass
class MetricsReport:
    ap: dict[tuple[str, float], float] = field(default_factory=dict)

    def mean_ap(self, thr: float) -> float:
        return float(np.mean([self.ap[(c, thr)] for c in CLASSES]))

    def row(self) -> dict[str, float]:
        out = {}
        for thr in THRESHOLDS:
            for c in CLASSES:
                out[f"AP_{c}@{thr}"] = self.ap[(c, thr)]
        for thr in THRESHOLDS:
            out[f"mAP@{thr}"] = self.mean_ap(thr)
        return out


def _as_class_dict(boxes) -> Mapping[str, Sequence[BoxBEV]]:
    return boxes if isinstance(boxes, Mapping) else split_by_class(boxes)


def evaluate_frames(frames: Sequence[tuple], thresholds: Sequence[float] = THRESHOLDS) -> MetricsReport:
    """Pool ``(pred, gt)`` frames and compute AP per class and threshold.

    ``pred`` and ``gt`` are either dicts keyed by class or flat box lists (split
    by size class).
    """
    report = MetricsReport()
    split = [(_as_class_dict(p), _as_class_dict(g)) for p, g in frames]
    for thr in thresholds:
        for c in CLASSES:
            matches = []
            n_gt = 0
            for pred, gt in split:
                gts = gt.get(c, ())
                n_gt += len(gts)
                matches.extend(match_frame(pred.get(c, ()), gts, thr))
            report.ap[(c, thr)] = average_precision(matches, n_gt)
    return report


def evaluate_boxes(pred, gt: Scenario, thresholds: Sequence[float] = THRESHOLDS) -> MetricsReport:
    return evaluate_frames([(pred, gt.gt)], thresholds)
