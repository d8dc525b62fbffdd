"""Detection metrics: greedy matching, AP/mAP@50, operating-point
precision/recall, size-binned and boundary-zone recall, and the
apparent-area characterization used to quantify resolution collapse.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import Box, apparent_area, iou
from .slicer import AnnotatedImage
from .merging import Detection
from .tiling import nearest_grid_boundary_distance, plan_grid

AREA_BINS_DEFAULT: tuple[tuple[float, float], ...] = ((16.0, 64.0), (64.0, math.inf))
BOUNDARY_BINS_DEFAULT: tuple[tuple[float, float], ...] = ((0.0, 16.0), (16.0, 32.0), (32.0, math.inf))


@dataclass(frozen=True)
class GroundTruth:
    """One ground-truth box with the derived fields every metric needs."""

    class_id: int
    box: Box
    area_native: float
    apparent_area: float
    center: tuple[float, float]
    boundary_dist: float


def build_ground_truths(
    dataset: Iterable[AnnotatedImage],
    *,
    reference_tile_size: int = 640,
    input_size: int = 640,
) -> dict[str, list[GroundTruth]]:
    """Derive per-image ground-truth records.

    Boundary distances are measured against the non-overlap reference grid
    (stride == tile size) so the boundary-zone metric compares strategies
    on common geometry.
    """
    out: dict[str, list[GroundTruth]] = {}
    for img in dataset:
        grid = plan_grid(img.width, img.height, reference_tile_size, reference_tile_size)
        records = []
        for ann in img.annotations:
            center = ann.box.center()
            records.append(
                GroundTruth(
                    class_id=ann.class_id,
                    box=ann.box,
                    area_native=ann.box.area(),
                    apparent_area=apparent_area(ann.box, img.width, img.height, input_size),
                    center=center,
                    boundary_dist=nearest_grid_boundary_distance(center, grid),
                )
            )
        out[img.image_id] = records
    return out


def greedy_match(
    preds: Sequence[Detection],
    gts: Sequence[GroundTruth],
    iou_thresh: float = 0.5,
) -> list[tuple[Detection, GroundTruth | None]]:
    """Greedy confidence-ordered matching for one image and one class.

    Each prediction takes the unmatched ground truth of highest IoU among
    those with IoU >= ``iou_thresh``; each ground truth matches at most
    once. Callers pass same-class collections (class restriction lives in
    :func:`match_image`).
    """
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].final_score, i))
    taken = [False] * len(gts)
    matched: dict[int, int] = {}
    for i in order:
        best_j, best_iou = None, 0.0
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            v = iou(preds[i].box_global, gt.box)
            if v >= iou_thresh and v > best_iou:
                best_j, best_iou = j, v
        if best_j is not None:
            taken[best_j] = True
            matched[i] = best_j
    return [(preds[i], gts[matched[i]] if i in matched else None) for i in order]


def match_image(
    preds: Sequence[Detection],
    gts: Sequence[GroundTruth],
    iou_thresh: float = 0.5,
) -> tuple[list[int | None], list[bool]]:
    """Class-restricted greedy matching for one image.

    Returns (gt index or None per prediction, matched flag per ground truth),
    both aligned to input order.
    """
    pred_match: list[int | None] = [None] * len(preds)
    gt_matched = [False] * len(gts)
    classes = {p.class_id for p in preds} | {g.class_id for g in gts}
    for class_id in classes:
        p_idx = [i for i, p in enumerate(preds) if p.class_id == class_id]
        g_idx = [j for j, g in enumerate(gts) if g.class_id == class_id]
        order = sorted(p_idx, key=lambda i: (-preds[i].final_score, i))
        for i in order:
            best_j, best_iou = None, 0.0
            for j in g_idx:
                if gt_matched[j]:
                    continue
                v = iou(preds[i].box_global, gts[j].box)
                if v >= iou_thresh and v > best_iou:
                    best_j, best_iou = j, v
            if best_j is not None:
                gt_matched[best_j] = True
                pred_match[i] = best_j
    return pred_match, gt_matched


def average_precision(scored_flags: Sequence[tuple[float, bool]], n_gt: int) -> float | None:
    """AP as the area under the monotone (all-points) precision envelope.

    ``scored_flags`` holds (confidence, is-true-positive) per prediction of
    one class across all images. None when the class has no ground truth.
    """
    if n_gt == 0:
        return None
    if not scored_flags:
        return 0.0
    order = sorted(range(len(scored_flags)), key=lambda i: (-scored_flags[i][0], i))
    tp = np.array([1.0 if scored_flags[i][1] else 0.0 for i in order])
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(1.0 - tp)
    recall = cum_tp / n_gt
    precision = cum_tp / (cum_tp + cum_fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    ap = 0.0
    for r, p in zip(recall, envelope):
        ap += (r - prev_r) * p
        prev_r = r
    return float(ap)


@dataclass
class BinRecall:
    """Recall within one ground-truth bin; recall is None when the bin is empty."""

    label: str
    lo: float
    hi: float
    n_gt: int = 0
    n_matched: int = 0

    @property
    def recall(self) -> float | None:
        return None if self.n_gt == 0 else self.n_matched / self.n_gt


def _bin_label(lo: float, hi: float, unit: str) -> str:
    if math.isinf(hi):
        return f">= {lo:g} {unit}"
    return f"[{lo:g}, {hi:g}) {unit}"


def _assign_bin(value: float, bins: Sequence[tuple[float, float]]) -> int | None:
    for k, (lo, hi) in enumerate(bins):
        if math.isinf(value) and math.isinf(hi):
            return k
        if lo <= value < hi:
            return k
    return None


@dataclass
class EvalReport:
    """All metrics for one strategy run on one dataset."""

    per_class_ap: dict[int, float | None] = field(default_factory=dict)
    map50: float = 0.0
    precision: float = 0.0
    recall: float = 0.0
    area_bins: list[BinRecall] = field(default_factory=list)
    boundary_bins: list[BinRecall] = field(default_factory=list)
    n_images: int = 0
    n_gt: int = 0
    n_preds: int = 0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    mean_time_ms: float | None = None

    def to_dict(self) -> dict:
        return {
            "map50": self.map50,
            "per_class_ap": {str(k): v for k, v in sorted(self.per_class_ap.items())},
            "precision": self.precision,
            "recall": self.recall,
            "area_bins": [
                {"label": b.label, "n_gt": b.n_gt, "n_matched": b.n_matched, "recall": b.recall}
                for b in self.area_bins
            ],
            "boundary_bins": [
                {"label": b.label, "n_gt": b.n_gt, "n_matched": b.n_matched, "recall": b.recall}
                for b in self.boundary_bins
            ],
            "counts": {
                "images": self.n_images,
                "gt": self.n_gt,
                "preds": self.n_preds,
                "tp": self.tp,
                "fp": self.fp,
                "fn": self.fn,
            },
            "mean_time_ms": self.mean_time_ms,
        }


def precision_recall_at_conf(
    preds_by_image: Mapping[str, Sequence[Detection]],
    gts_by_image: Mapping[str, Sequence[GroundTruth]],
    conf: float = 0.25,
    iou_thresh: float = 0.5,
) -> tuple[float, float]:
    """Global precision/recall over all classes at the operating threshold.

    Vacuous conventions: precision is 1.0 when nothing was predicted,
    recall is 1.0 when there is no ground truth (reports never carry NaN).
    """
    tp = fp = fn = 0
    for image_id in sorted(set(preds_by_image) | set(gts_by_image)):
        preds = [p for p in preds_by_image.get(image_id, ()) if p.final_score >= conf]
        gts = list(gts_by_image.get(image_id, ()))
        pred_match, gt_matched = match_image(preds, gts, iou_thresh)
        tp += sum(1 for m in pred_match if m is not None)
        fp += sum(1 for m in pred_match if m is None)
        fn += sum(1 for m in gt_matched if not m)
    precision = 1.0 if tp + fp == 0 else tp / (tp + fp)
    recall = 1.0 if tp + fn == 0 else tp / (tp + fn)
    return precision, recall


def map50(
    preds_by_image: Mapping[str, Sequence[Detection]],
    gts_by_image: Mapping[str, Sequence[GroundTruth]],
    class_ids: Iterable[int],
    iou_thresh: float = 0.5,
) -> tuple[float, dict[int, float | None]]:
    """mAP@50: mean per-class AP over classes with at least one ground truth."""
    flags: dict[int, list[tuple[float, bool]]] = defaultdict(list)
    n_gt: dict[int, int] = defaultdict(int)
    for image_id in sorted(set(preds_by_image) | set(gts_by_image)):
        preds = list(preds_by_image.get(image_id, ()))
        gts = list(gts_by_image.get(image_id, ()))
        pred_match, _ = match_image(preds, gts, iou_thresh)
        for p, m in zip(preds, pred_match):
            flags[p.class_id].append((p.final_score, m is not None))
        for g in gts:
            n_gt[g.class_id] += 1
    per_class = {c: average_precision(flags.get(c, []), n_gt.get(c, 0)) for c in class_ids}
    valid = [v for v in per_class.values() if v is not None]
    return (float(np.mean(valid)) if valid else 0.0), per_class


def _binned_recall(
    preds_by_image: Mapping[str, Sequence[Detection]],
    gts_by_image: Mapping[str, Sequence[GroundTruth]],
    value_of,
    bins: Sequence[tuple[float, float]],
    unit: str,
    conf: float,
    iou_thresh: float,
) -> list[BinRecall]:
    out = [BinRecall(label=_bin_label(lo, hi, unit), lo=lo, hi=hi) for lo, hi in bins]
    for image_id in sorted(set(preds_by_image) | set(gts_by_image)):
        preds = [p for p in preds_by_image.get(image_id, ()) if p.final_score >= conf]
        gts = list(gts_by_image.get(image_id, ()))
        _, gt_matched = match_image(preds, gts, iou_thresh)
        for g, m in zip(gts, gt_matched):
            k = _assign_bin(value_of(g), bins)
            if k is None:
                continue
            out[k].n_gt += 1
            if m:
                out[k].n_matched += 1
    return out


def recall_by_area_bin(
    preds_by_image: Mapping[str, Sequence[Detection]],
    gts_by_image: Mapping[str, Sequence[GroundTruth]],
    bins: Sequence[tuple[float, float]] = AREA_BINS_DEFAULT,
    conf: float = 0.25,
    iou_thresh: float = 0.5,
) -> list[BinRecall]:
    """Recall per apparent-area bin at the operating threshold."""
    return _binned_recall(
        preds_by_image, gts_by_image, lambda g: g.apparent_area, bins, "px^2", conf, iou_thresh
    )


def recall_by_boundary_bin(
    preds_by_image: Mapping[str, Sequence[Detection]],
    gts_by_image: Mapping[str, Sequence[GroundTruth]],
    bins: Sequence[tuple[float, float]] = BOUNDARY_BINS_DEFAULT,
    conf: float = 0.25,
    iou_thresh: float = 0.5,
) -> list[BinRecall]:
    """Recall per center-to-nearest-interior-tile-boundary bin.

    Ground truths on an image with no interior boundary land in the far
    bin (their distance is the +inf sentinel).
    """
    return _binned_recall(
        preds_by_image, gts_by_image, lambda g: g.boundary_dist, bins, "px", conf, iou_thresh
    )


def evaluate(
    preds_by_image: Mapping[str, Sequence[Detection]],
    gts_by_image: Mapping[str, Sequence[GroundTruth]],
    class_ids: Iterable[int],
    *,
    conf: float = 0.25,
    iou_thresh: float = 0.5,
    area_bins: Sequence[tuple[float, float]] = AREA_BINS_DEFAULT,
    boundary_bins: Sequence[tuple[float, float]] = BOUNDARY_BINS_DEFAULT,
    mean_time_ms: float | None = None,
) -> EvalReport:
    """Assemble the full report for one set of final detections."""
    class_ids = sorted(set(class_ids))
    report = EvalReport(mean_time_ms=mean_time_ms)
    report.map50, report.per_class_ap = map50(preds_by_image, gts_by_image, class_ids, iou_thresh)
    report.precision, report.recall = precision_recall_at_conf(
        preds_by_image, gts_by_image, conf, iou_thresh
    )
    report.area_bins = recall_by_area_bin(preds_by_image, gts_by_image, area_bins, conf, iou_thresh)
    report.boundary_bins = recall_by_boundary_bin(
        preds_by_image, gts_by_image, boundary_bins, conf, iou_thresh
    )
    report.n_images = len(set(preds_by_image) | set(gts_by_image))
    report.n_gt = sum(len(v) for v in gts_by_image.values())
    report.n_preds = sum(len(v) for v in preds_by_image.values())
    tp = fp = fn = 0
    for image_id in sorted(set(preds_by_image) | set(gts_by_image)):
        preds = [p for p in preds_by_image.get(image_id, ()) if p.final_score >= conf]
        gts = list(gts_by_image.get(image_id, ()))
        pred_match, gt_matched = match_image(preds, gts, iou_thresh)
        tp += sum(1 for m in pred_match if m is not None)
        fp += sum(1 for m in pred_match if m is None)
        fn += sum(1 for m in gt_matched if not m)
    report.tp, report.fp, report.fn = tp, fp, fn
    return report


def resolution_collapse_report(
    dataset: Iterable[AnnotatedImage],
    input_sizes: Sequence[int] = (640, 1280),
    thresholds: Sequence[float] = (16.0, 64.0, 256.0),
) -> dict:
    """Apparent-area distribution of all ground-truth boxes per input size.

    Reports, per size: count, median apparent area, fraction below each
    threshold (strictly), and a fixed-edge histogram.
    """
    edges = [0.0, 16.0, 64.0, 256.0, 1024.0, 4096.0, 16384.0, math.inf]
    images = list(dataset)
    out: dict = {"input_sizes": {}}
    for size in input_sizes:
        areas = [
            apparent_area(ann.box, img.width, img.height, size)
            for img in images
            for ann in img.annotations
        ]
        arr = np.array(areas, dtype=float)
        n = len(areas)
        counts = [int(((arr >= lo) & (arr < hi)).sum()) if n else 0 for lo, hi in zip(edges[:-1], edges[1:])]
        out["input_sizes"][str(size)] = {
            "n_boxes": n,
            "median_area": float(np.median(arr)) if n else None,
            "fraction_below": {
                str(int(t)): (float((arr < t).mean()) if n else None) for t in thresholds
            },
            "histogram": {
                "edges": [e if not math.isinf(e) else None for e in edges],
                "counts": counts,
            },
        }
    return out
