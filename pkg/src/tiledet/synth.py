"""Synthetic boards, a deterministic simulated detector, and the
brute-force oracles the test suite checks the real implementations
against.

The simulated detector reproduces the two failure modes the pipeline
targets at desk scale: detections vanish when a defect's apparent area
at the work unit's input scale falls below a floor (resolution
collapse), and partially visible defects get confidence scaled by a
visibility curve (boundary splitting).
"""

from __future__ import annotations

import math
import random
import zlib
from dataclasses import dataclass
from typing import Mapping, Sequence

from .geometry import Box, clip_box, iou
from .merging import Detection
from .slicer import AnnotatedImage, Annotation

DEFAULT_CURVE: tuple[tuple[float, float], ...] = ((0.0, 0.1), (0.1, 0.1), (1.0, 1.0))


@dataclass(frozen=True)
class PlantedFalsePositive:
    """A fixed spurious detection emitted by every work unit that fully contains it."""

    class_id: int
    box: tuple[float, float, float, float]
    score: float


@dataclass(frozen=True)
class SimDetectorParams:
    """Knobs of the simulated detector; fully deterministic under ``seed``."""

    base_confidence: float = 0.9
    visibility_curve: tuple[tuple[float, float], ...] = DEFAULT_CURVE
    area_floor: float = 0.0
    fp_rate: float = 0.0
    fp_score: float = 0.3
    jitter: float = 0.0
    planted: tuple[PlantedFalsePositive, ...] = ()
    seed: int = 0

    def curve(self, visible_fraction: float) -> float:
        """Piecewise-linear confidence multiplier over visible fraction."""
        pts = self.visibility_curve
        v = min(max(visible_fraction, 0.0), 1.0)
        if v <= pts[0][0]:
            return pts[0][1]
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            if v <= x1:
                if x1 == x0:
                    return y1
                return y0 + (y1 - y0) * (v - x0) / (x1 - x0)
        return pts[-1][1]

    @classmethod
    def from_dict(cls, data: Mapping) -> "SimDetectorParams":
        planted = tuple(
            PlantedFalsePositive(int(p["class_id"]), tuple(float(v) for v in p["box"]), float(p["score"]))
            for p in data.get("planted", ())
        )
        curve = tuple((float(a), float(b)) for a, b in data.get("visibility_curve", DEFAULT_CURVE))
        return cls(
            base_confidence=float(data.get("base_confidence", 0.9)),
            visibility_curve=curve,
            area_floor=float(data.get("area_floor", 0.0)),
            fp_rate=float(data.get("fp_rate", 0.0)),
            fp_score=float(data.get("fp_score", 0.3)),
            jitter=float(data.get("jitter", 0.0)),
            planted=planted,
            seed=int(data.get("seed", 0)),
        )

    def to_dict(self) -> dict:
        return {
            "base_confidence": self.base_confidence,
            "visibility_curve": [list(p) for p in self.visibility_curve],
            "area_floor": self.area_floor,
            "fp_rate": self.fp_rate,
            "fp_score": self.fp_score,
            "jitter": self.jitter,
            "planted": [
                {"class_id": p.class_id, "box": list(p.box), "score": p.score} for p in self.planted
            ],
            "seed": self.seed,
        }


def _unit_rng(seed: int, unit_id: str) -> random.Random:
    # crc32 keeps the derived seed stable across processes (str hash() is salted)
    return random.Random(seed ^ zlib.crc32(unit_id.encode("utf-8")))


def _poisson(rng: random.Random, mean: float) -> int:
    if mean <= 0.0:
        return 0
    limit = math.exp(-mean)
    k, p = 0, 1.0
    while True:
        p *= rng.random()
        if p <= limit:
            return k
        k += 1


@dataclass(frozen=True)
class SimRawDetection:
    box: Box  # region-local
    score: float
    class_id: int


def simulate_detector(
    region: Box,
    target_input: int,
    unit_id: str,
    annotations: Sequence[Annotation],
    params: SimDetectorParams,
) -> list[SimRawDetection]:
    """Region-local detections for one work unit.

    For each ground truth intersecting the region: skipped when its
    clipped apparent area (at the unit's input scale) is below the floor,
    else emitted at the clipped box +- jitter with confidence
    base * curve(visible fraction). Planted false positives fire in
    units that fully contain them; Poisson false positives are added at
    ``fp_rate`` per unit.
    """
    scale = target_input / max(region.width, region.height)
    rng = _unit_rng(params.seed, unit_id)
    out: list[SimRawDetection] = []
    for ann in annotations:
        clipped, fraction = clip_box(ann.box, region)
        if clipped is None:
            continue
        if clipped.area() * scale * scale < params.area_floor:
            continue
        conf = params.base_confidence * params.curve(fraction)
        if conf <= 0.0:
            continue
        x1, y1 = clipped.x1 - region.x1, clipped.y1 - region.y1
        x2, y2 = clipped.x2 - region.x1, clipped.y2 - region.y1
        if params.jitter > 0.0:
            j = params.jitter
            x1 += rng.uniform(-j, j)
            y1 += rng.uniform(-j, j)
            x2 += rng.uniform(-j, j)
            y2 += rng.uniform(-j, j)
            x1, x2 = min(x1, x2), max(x1, x2)
            y1, y2 = min(y1, y2), max(y1, y2)
        out.append(SimRawDetection(Box(x1, y1, x2, y2), min(conf, 1.0), ann.class_id))
    for fp in params.planted:
        box = Box(*fp.box)
        if region.contains(box):
            out.append(
                SimRawDetection(
                    Box(box.x1 - region.x1, box.y1 - region.y1, box.x2 - region.x1, box.y2 - region.y1),
                    fp.score,
                    fp.class_id,
                )
            )
    for _ in range(_poisson(rng, params.fp_rate)):
        w = rng.uniform(8.0, 40.0)
        h = rng.uniform(8.0, 40.0)
        x = rng.uniform(0.0, max(region.width - w, 1.0))
        y = rng.uniform(0.0, max(region.height - h, 1.0))
        out.append(
            SimRawDetection(Box(x, y, x + w, y + h), params.fp_score, rng.randrange(0, 6))
        )
    return out


# ---------------------------------------------------------------------------
# scenarios

def scenario_to_dataset(spec: Mapping) -> tuple[list[AnnotatedImage], list[str]]:
    """Materialize a scenario spec into annotated images.

    Placements are explicit centers or ``near_boundary`` offsets
    ({axis, line, delta, along}); ``random_defects`` adds seeded uniform
    placements. Deterministic given the spec (byte-identical reruns).
    """
    classes = [str(c) for c in spec.get("classes", ["defect"])]
    width = int(spec["image_width"])
    height = int(spec["image_height"])
    rng = random.Random(int(spec.get("seed", 0)))
    images: list[AnnotatedImage] = []
    for i, image_spec in enumerate(spec.get("images", [])):
        image_id = image_spec.get("image_id", f"board_{i:03d}")
        img = AnnotatedImage(
            image_id=image_id,
            path=f"{image_id}.png",
            width=int(image_spec.get("width", width)),
            height=int(image_spec.get("height", height)),
        )
        for defect in image_spec.get("defects", []):
            w = float(defect["width"])
            h = float(defect["height"])
            if "center" in defect:
                cx, cy = (float(v) for v in defect["center"])
            else:
                nb = defect["near_boundary"]
                line = float(nb["line"])
                delta = float(nb.get("delta", 0.0))
                along = float(nb["along"])
                if nb.get("axis", "x") == "x":
                    cx, cy = line + delta, along
                else:
                    cx, cy = along, line + delta
            box = Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
            if box.x1 < 0 or box.y1 < 0 or box.x2 > img.width or box.y2 > img.height:
                raise ValueError(f"{image_id}: defect {box.as_tuple()} outside image")
            img.annotations.append(Annotation(class_id=int(defect.get("class_id", 0)), box=box))
        n_random = int(image_spec.get("random_defects", 0))
        for _ in range(n_random):
            w = rng.uniform(16.0, 48.0)
            h = rng.uniform(16.0, 48.0)
            cx = rng.uniform(w / 2, img.width - w / 2)
            cy = rng.uniform(h / 2, img.height - h / 2)
            img.annotations.append(
                Annotation(
                    class_id=rng.randrange(len(classes)),
                    box=Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2),
                )
            )
        images.append(img)
    return images, classes


_CLASS_COLORS = (
    (200, 40, 40),
    (40, 160, 40),
    (40, 80, 220),
    (220, 180, 30),
    (160, 40, 200),
    (30, 200, 200),
)


def render_board(img: AnnotatedImage, path: str, *, background=(20, 60, 20)) -> None:
    """Flat background with one filled rectangle per defect (smoke-test pixels)."""
    from PIL import Image, ImageDraw

    canvas = Image.new("RGB", (img.width, img.height), background)
    draw = ImageDraw.Draw(canvas)
    for ann in img.annotations:
        color = _CLASS_COLORS[ann.class_id % len(_CLASS_COLORS)]
        draw.rectangle([ann.box.x1, ann.box.y1, ann.box.x2 - 1, ann.box.y2 - 1], fill=color)
    canvas.save(path)


# Committed fixture specs: the standard suites the acceptance tests run on.

def collapse_suite() -> tuple[dict, SimDetectorParams]:
    """Small defects whose apparent area at 640-input collapses below 64 px^2."""
    small = [
        {"class_id": 0, "width": 20, "height": 20, "center": [300, 300]},
        {"class_id": 1, "width": 20, "height": 20, "center": [900, 450]},
        {"class_id": 0, "width": 22, "height": 22, "center": [1500, 900]},
        {"class_id": 1, "width": 20, "height": 24, "center": [2100, 1400]},
        {"class_id": 0, "width": 24, "height": 20, "center": [700, 1900]},
        {"class_id": 1, "width": 20, "height": 20, "center": [1900, 2200]},
    ]
    large = [
        {"class_id": 0, "width": 80, "height": 80, "center": [450, 1100]},
        {"class_id": 1, "width": 90, "height": 70, "center": [1200, 1800]},
        {"class_id": 0, "width": 80, "height": 96, "center": [2300, 700]},
        {"class_id": 1, "width": 100, "height": 80, "center": [1700, 300]},
    ]
    spec = {
        "name": "collapse_suite",
        "seed": 7,
        "image_width": 2560,
        "image_height": 2560,
        "classes": ["defect_a", "defect_b"],
        "images": [
            {"image_id": "collapse_000", "defects": small + large},
            {
                "image_id": "collapse_001",
                "defects": [
                    {"class_id": c["class_id"], "width": c["width"], "height": c["height"],
                     "center": [c["center"][0] + 37, c["center"][1] + 53]}
                    for c in small + large
                ],
            },
        ],
    }
    params = SimDetectorParams(base_confidence=0.9, area_floor=64.0, seed=7)
    return spec, params


def boundary_suite() -> tuple[dict, SimDetectorParams]:
    """Defects straddling the x=640 reference boundary at centre offsets < 16 px.

    The visibility curve keeps partial detections below the 0.25
    operating threshold, so without overlap the straddlers are missed.
    """
    straddlers = [
        {"class_id": 0, "width": 100, "height": 40, "near_boundary": {"axis": "x", "line": 640, "delta": 0, "along": 200}},
        {"class_id": 0, "width": 80, "height": 40, "near_boundary": {"axis": "x", "line": 640, "delta": 4, "along": 330}},
        {"class_id": 1, "width": 100, "height": 48, "near_boundary": {"axis": "x", "line": 640, "delta": -8, "along": 460}},
        {"class_id": 1, "width": 96, "height": 40, "near_boundary": {"axis": "x", "line": 640, "delta": 12, "along": 980}},
        {"class_id": 0, "width": 88, "height": 44, "near_boundary": {"axis": "x", "line": 640, "delta": -4, "along": 1100}},
    ]
    mid_band = [
        {"class_id": 0, "width": 80, "height": 40, "near_boundary": {"axis": "x", "line": 640, "delta": 20, "along": 760}},
        {"class_id": 1, "width": 80, "height": 40, "near_boundary": {"axis": "x", "line": 640, "delta": -24, "along": 860}},
    ]
    interior = [
        {"class_id": 0, "width": 48, "height": 48, "center": [300, 300]},
        {"class_id": 1, "width": 48, "height": 48, "center": [980, 240]},
        {"class_id": 0, "width": 56, "height": 40, "center": [260, 1000]},
        {"class_id": 1, "width": 40, "height": 56, "center": [1000, 1060]},
    ]
    spec = {
        "name": "boundary_suite",
        "seed": 11,
        "image_width": 1280,
        "image_height": 1280,
        "classes": ["defect_a", "defect_b"],
        "images": [{"image_id": "boundary_000", "defects": straddlers + mid_band + interior}],
    }
    params = SimDetectorParams(
        base_confidence=1.0,
        visibility_curve=((0.0, 0.0), (0.7, 0.05), (1.0, 1.0)),
        seed=11,
    )
    return spec, params


def adversarial_split_suite() -> tuple[dict, SimDetectorParams]:
    """Split-detection variant: partial detections at 0.55 compete with a
    planted 0.60 false positive; only the topology-aware boost ranks the
    genuine halves above it."""
    spec = {
        "name": "adversarial_split_suite",
        "seed": 13,
        "image_width": 1280,
        "image_height": 640,
        "classes": ["defect_a"],
        "images": [
            {
                "image_id": "adversarial_000",
                "defects": [
                    {"class_id": 0, "width": 400, "height": 200, "center": [576, 250]},
                    {"class_id": 0, "width": 60, "height": 60, "center": [200, 500]},
                    {"class_id": 0, "width": 60, "height": 60, "center": [1100, 160]},
                ],
            }
        ],
    }
    params = SimDetectorParams(
        base_confidence=1.0,
        visibility_curve=((0.0, 0.0), (0.66, 0.55), (1.0, 1.0)),
        planted=(PlantedFalsePositive(class_id=0, box=(490.0, 150.0, 620.0, 350.0), score=0.60),),
        seed=13,
    )
    return spec, params


STANDARD_SUITES = {
    "collapse": collapse_suite,
    "boundary": boundary_suite,
    "adversarial": adversarial_split_suite,
}


# ---------------------------------------------------------------------------
# brute-force oracles (test references; deliberately independent code paths)

def oracle_nms(dets: Sequence[Detection], iou_thresh: float, score_field: str = "original") -> list[Detection]:
    """Exhaustive O(n^2) class-aware NMS; same tie-breaking contract as the main path."""

    def score(d: Detection) -> float:
        if score_field == "adjusted":
            if d.adjusted_score is None:
                raise ValueError("adjusted score absent")
            return d.adjusted_score
        return d.score

    remaining = {i: d for i, d in enumerate(dets)}
    kept: list[tuple[int, Detection]] = []
    while remaining:
        best = None
        for i, d in remaining.items():
            key = (-score(d), -d.box_global.area(), i)
            if best is None or key < best[0]:
                best = (key, i, d)
        _, bi, bd = best
        kept.append((bi, bd))
        del remaining[bi]
        for i in list(remaining):
            other = remaining[i]
            if other.class_id == bd.class_id and iou(other.box_global, bd.box_global) > iou_thresh:
                del remaining[i]
    kept.sort(key=lambda t: (-score(t[1]), -t[1].box_global.area(), t[0]))
    return [d for _, d in kept]


def oracle_ap(scored_flags: Sequence[tuple[float, bool]], n_gt: int) -> float | None:
    """Direct PR-curve integration: at each point, precision is the best
    achieved at any equal-or-higher recall."""
    if n_gt == 0:
        return None
    if not scored_flags:
        return 0.0
    ordered = sorted(range(len(scored_flags)), key=lambda i: (-scored_flags[i][0], i))
    points = []
    tp = fp = 0
    for i in ordered:
        if scored_flags[i][1]:
            tp += 1
        else:
            fp += 1
        points.append((tp / n_gt, tp / (tp + fp)))
    ap = 0.0
    prev_r = 0.0
    for k, (r, _) in enumerate(points):
        best_p = max(p for _, p in points[k:])
        ap += (r - prev_r) * best_p
        prev_r = r
    return ap
