"""Global fusion of per-tile detections.

Two merge modes share the same class-aware NMS:

* plain merge: confidence filter, then NMS on original scores;
* topology-aware merge: boundary-sensitive detections (nearest tile-edge
  distance below tau) get their score raised by min(1, s + lambda * A),
  where A is the best same-class agreement found in the 4-adjacent
  neighbour tile across the shared edge, and NMS then ranks by the
  adjusted scores. The adjusted score is the detection's confidence
  everywhere downstream.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

from .geometry import Box, TileDims, boundary_distance, clip_to_tile, iou, remap_to_global
from .tiling import AdjacencyGraph, TileGrid, TileSpec, adjacency_from_nodes

EDGE_NAMES = ("left", "top", "right", "bottom")

_EDGE_NEIGHBOR = {
    "left": (0, -1),
    "right": (0, 1),
    "top": (-1, 0),
    "bottom": (1, 0),
}


class MergeError(ValueError):
    """Inconsistent detections handed to a merge operation."""


@dataclass(frozen=True)
class Detection:
    """A scored, classed box with optional tile provenance and TA-TM fields."""

    class_id: int
    score: float
    box_global: Box
    box_tile: Box | None = None
    tile: tuple[int, int] | None = None
    boundary_distance: float | None = None
    near_edges: frozenset[str] = frozenset()
    agreement: float | None = None
    adjusted_score: float | None = None
    class_name: str | None = None
    image_id: str | None = None

    @property
    def final_score(self) -> float:
        """Reported confidence: the adjusted score once TA-TM has run, else the raw score."""
        return self.score if self.adjusted_score is None else self.adjusted_score

    @property
    def boundary_sensitive(self) -> bool:
        return bool(self.near_edges)


@dataclass(frozen=True)
class MergeParams:
    """Merge thresholds; defaults reproduce the reference configuration."""

    conf_threshold: float = 0.25
    nms_iou: float = 0.45
    tau: float = 16.0
    lam: float = 0.2
    mu: float = 0.0
    filter_after_adjust: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.conf_threshold <= 1.0:
            raise ValueError(f"conf_threshold must be in [0, 1], got {self.conf_threshold}")
        if not 0.0 < self.nms_iou < 1.0:
            raise ValueError(f"nms_iou must be in (0, 1), got {self.nms_iou}")
        if self.tau < 0.0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        if self.lam < 0.0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.mu != 0.0:
            raise NotImplementedError("edge-continuity term (mu) is not implemented; mu must be 0")


@dataclass
class MergeAudit:
    """Counters for one merged image."""

    n_input: int = 0
    n_kept_conf: int = 0
    n_sensitive: int = 0
    n_boosted: int = 0
    n_output: int = 0
    boosted: list[Detection] = field(default_factory=list)


def detection_from_tile_box(
    raw_box: Box,
    score: float,
    class_id: int,
    tile: TileSpec,
    *,
    slop: float = 2.0,
    class_name: str | None = None,
    image_id: str | None = None,
) -> Detection:
    """Build a tile-provenance detection from a raw tile-local detector box.

    The box is clipped to the tile (tolerating ``slop`` px of detector
    overshoot) so boundary distances are always well defined on the
    stored tile-local box; the global box is its translation.
    """
    box_tile = clip_to_tile(raw_box, tile.dims(), slop=slop)
    dists = boundary_distance(box_tile, tile.dims(), slop=slop)
    return Detection(
        class_id=class_id,
        score=score,
        box_global=remap_to_global(box_tile, (tile.x0, tile.y0)),
        box_tile=box_tile,
        tile=tile.index,
        boundary_distance=dists.nearest,
        class_name=class_name,
        image_id=image_id,
    )


def _chosen_score(det: Detection, score_field: str) -> float:
    if score_field == "original":
        return det.score
    if score_field == "adjusted":
        if det.adjusted_score is None:
            raise MergeError("adjusted score requested but absent on a detection")
        return det.adjusted_score
    raise ValueError(f"unknown score_field: {score_field!r}")


def class_aware_nms(
    dets: Iterable[Detection],
    iou_thresh: float,
    score_field: str = "original",
) -> list[Detection]:
    """Greedy per-class NMS on global boxes.

    Within each class, detections are taken in descending chosen-score
    order (ties: larger global-box area first, then stable input order);
    a kept detection suppresses later same-class detections whose IoU
    with it strictly exceeds ``iou_thresh``. Survivors keep all fields
    and come back sorted by descending chosen score (same tie-breaks).
    """
    indexed = list(enumerate(dets))
    by_class: dict[int, list[tuple[int, Detection]]] = defaultdict(list)
    for i, det in indexed:
        by_class[det.class_id].append((i, det))

    survivors: list[tuple[int, Detection]] = []
    for class_id in sorted(by_class):
        group = sorted(
            by_class[class_id],
            key=lambda t: (-_chosen_score(t[1], score_field), -t[1].box_global.area(), t[0]),
        )
        kept: list[tuple[int, Detection]] = []
        for i, det in group:
            if all(iou(det.box_global, k.box_global) <= iou_thresh for _, k in kept):
                kept.append((i, det))
        survivors.extend(kept)

    survivors.sort(key=lambda t: (-_chosen_score(t[1], score_field), -t[1].box_global.area(), t[0]))
    return [det for _, det in survivors]


def mark_boundary_sensitivity(det: Detection, tile: TileDims, tau: float) -> Detection:
    """Fill boundary distance and the set of edges nearer than tau (strict)."""
    if det.box_tile is None:
        raise MergeError("detection has no tile-local box")
    dists = boundary_distance(det.box_tile, tile)
    near = frozenset(name for name in EDGE_NAMES if getattr(dists, name) < tau)
    return replace(det, boundary_distance=dists.nearest, near_edges=near)


def _edge_line(tile: TileSpec, edge: str) -> float:
    if edge == "left":
        return float(tile.x0)
    if edge == "right":
        return float(tile.x0 + tile.width)
    if edge == "top":
        return float(tile.y0)
    return float(tile.y0 + tile.height)


def adjacent_agreement(
    det: Detection,
    tiles: Mapping[tuple[int, int], TileSpec],
    dets_by_tile: Mapping[tuple[int, int], list[Detection]],
    tau: float,
    graph: AdjacencyGraph | None = None,
) -> float:
    """Best same-class agreement for a boundary-sensitive detection.

    For each near edge, looks in the 4-adjacent neighbour tile for
    detections of the same class whose global box (a) overlaps the
    detection's on the axis parallel to the shared edge, and (b)
    intersects or lies within tau px of the detection tile's edge line
    in global coordinates. Returns the maximum original score among
    qualifying candidates, or 0.0 when none qualify or no neighbour
    tile exists (image border).
    """
    if det.tile is None:
        raise MergeError("detection has no tile provenance")
    tile = tiles[det.tile]
    best = 0.0
    for edge in det.near_edges:
        dr, dc = _EDGE_NEIGHBOR[edge]
        neighbor = (det.tile[0] + dr, det.tile[1] + dc)
        if graph is not None:
            if not graph.has_edge(det.tile, neighbor):
                continue
        elif neighbor not in tiles:
            continue
        line = _edge_line(tile, edge)
        vertical_edge = edge in ("left", "right")
        for cand in dets_by_tile.get(neighbor, ()):
            if cand.class_id != det.class_id:
                continue
            g, cg = det.box_global, cand.box_global
            if vertical_edge:
                parallel_overlap = min(g.y2, cg.y2) - max(g.y1, cg.y1)
                lo, hi = cg.x1, cg.x2
            else:
                parallel_overlap = min(g.x2, cg.x2) - max(g.x1, cg.x1)
                lo, hi = cg.y1, cg.y2
            if parallel_overlap <= 0.0:
                continue
            line_dist = 0.0 if lo <= line <= hi else min(abs(lo - line), abs(hi - line))
            if line_dist > tau:
                continue
            best = max(best, cand.score)
    return best


def adjust_score(score: float, agreement: float, lam: float) -> float:
    """min(1.0, s + lambda * A)."""
    return min(1.0, score + lam * agreement)


def _as_tile_map(tiles: TileGrid | Mapping[tuple[int, int], TileSpec]) -> dict[tuple[int, int], TileSpec]:
    if isinstance(tiles, TileGrid):
        return tiles.tile_map()
    return dict(tiles)


def plain_merge(dets: Iterable[Detection], params: MergeParams) -> list[Detection]:
    """Confidence filter then class-aware NMS on original scores."""
    kept = [d for d in dets if d.score >= params.conf_threshold]
    return class_aware_nms(kept, params.nms_iou, score_field="original")


def ta_tm_merge(
    dets: Iterable[Detection],
    tiles: TileGrid | Mapping[tuple[int, int], TileSpec],
    params: MergeParams,
) -> tuple[list[Detection], MergeAudit]:
    """Topology-aware merge of one image's per-tile detections.

    Pipeline: confidence filter -> mark boundary sensitivity -> compute
    agreement per sensitive detection -> score adjustment -> class-aware
    NMS on adjusted scores. Every output detection carries an adjusted
    score (equal to the raw score when no boost applied) so its reported
    confidence is the adjusted one. The audit counts detections whose
    score actually rose.
    """
    dets = list(dets)
    audit = MergeAudit(n_input=len(dets))
    for det in dets:
        if det.tile is None or det.box_tile is None:
            raise MergeError("topology-aware merge requires tile provenance on every detection")

    tile_map = _as_tile_map(tiles)
    graph = adjacency_from_nodes(frozenset(tile_map))

    if not params.filter_after_adjust:
        dets = [d for d in dets if d.score >= params.conf_threshold]
    audit.n_kept_conf = len(dets)

    marked = [mark_boundary_sensitivity(d, tile_map[d.tile].dims(), params.tau) for d in dets]
    dets_by_tile: dict[tuple[int, int], list[Detection]] = defaultdict(list)
    for det in marked:
        dets_by_tile[det.tile].append(det)

    adjusted: list[Detection] = []
    for det in marked:
        if det.boundary_sensitive:
            agreement = adjacent_agreement(det, tile_map, dets_by_tile, params.tau, graph)
            new_score = adjust_score(det.score, agreement, params.lam)
            det = replace(det, agreement=agreement, adjusted_score=new_score)
            audit.n_sensitive += 1
            if new_score > det.score:
                audit.n_boosted += 1
                audit.boosted.append(det)
        else:
            det = replace(det, adjusted_score=det.score)
        adjusted.append(det)

    if params.filter_after_adjust:
        adjusted = [d for d in adjusted if d.adjusted_score >= params.conf_threshold]

    merged = class_aware_nms(adjusted, params.nms_iou, score_field="adjusted")
    audit.n_output = len(merged)
    return merged, audit


def canonical_sort(dets: Iterable[Detection]) -> list[Detection]:
    """Deterministic, permutation-independent ordering for serialized output."""
    return sorted(
        dets,
        key=lambda d: (
            -d.final_score,
            d.class_id,
            d.box_global.x1,
            d.box_global.y1,
            d.box_global.x2,
            d.box_global.y2,
        ),
    )
