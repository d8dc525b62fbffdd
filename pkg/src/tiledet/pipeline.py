"""End-to-end orchestration of the five inference strategies.

Each strategy turns an image into work units (one resized whole image, or
one unit per grid tile), hands them to a detector backend, remaps the
returned region-local boxes into global coordinates, merges, and times
the stages. Backends are pluggable: precomputed interchange files, an
external subprocess speaking newline-delimited JSON, an in-process
callable, or the simulated detector.
"""

from __future__ import annotations

import hashlib
import json
import logging
import subprocess
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

from .geometry import Box, resize_scale
from .merging import (
    Detection,
    MergeAudit,
    MergeParams,
    canonical_sort,
    detection_from_tile_box,
    plain_merge,
    ta_tm_merge,
)
from .slicer import AnnotatedImage
from .tiling import TileGrid, TileSpec, plan_grid
from . import formats
from . import synth

log = logging.getLogger(__name__)


class BackendError(RuntimeError):
    """A detector backend failed on a work unit."""


class StrategyKind(str, Enum):
    FULL_640 = "full640"
    FULL_1280 = "full1280"
    TILE_NMS = "tile_nms"
    TILE_OVERLAP_NMS = "tile_overlap_nms"
    TILE_OVERLAP_TATM = "tile_overlap_tatm"


FULL_KINDS = (StrategyKind.FULL_640, StrategyKind.FULL_1280)


@dataclass(frozen=True)
class Strategy:
    """One inference strategy plus its parameters."""

    kind: StrategyKind
    input_size: int = 640
    tile_size: int = 640
    stride: int = 512
    merge: MergeParams = MergeParams()

    def __post_init__(self) -> None:
        if self.kind == StrategyKind.TILE_NMS and self.stride != self.tile_size:
            raise ValueError("tile_nms requires stride == tile_size")
        if self.kind in (StrategyKind.TILE_OVERLAP_NMS, StrategyKind.TILE_OVERLAP_TATM):
            if not 0 < self.stride < self.tile_size:
                raise ValueError(f"{self.kind.value} requires 0 < stride < tile_size")

    @property
    def is_tiled(self) -> bool:
        return self.kind not in FULL_KINDS

    @property
    def uses_tatm(self) -> bool:
        return self.kind == StrategyKind.TILE_OVERLAP_TATM

    @classmethod
    def full640(cls, merge: MergeParams = MergeParams()) -> "Strategy":
        return cls(StrategyKind.FULL_640, input_size=640, merge=merge)

    @classmethod
    def full1280(cls, merge: MergeParams = MergeParams()) -> "Strategy":
        return cls(StrategyKind.FULL_1280, input_size=1280, merge=merge)

    @classmethod
    def tile_nms(cls, tile_size: int = 640, merge: MergeParams = MergeParams()) -> "Strategy":
        return cls(StrategyKind.TILE_NMS, tile_size=tile_size, stride=tile_size, merge=merge)

    @classmethod
    def tile_overlap_nms(
        cls, tile_size: int = 640, stride: int = 512, merge: MergeParams = MergeParams()
    ) -> "Strategy":
        return cls(StrategyKind.TILE_OVERLAP_NMS, tile_size=tile_size, stride=stride, merge=merge)

    @classmethod
    def tile_overlap_tatm(
        cls, tile_size: int = 640, stride: int = 512, merge: MergeParams = MergeParams()
    ) -> "Strategy":
        return cls(StrategyKind.TILE_OVERLAP_TATM, tile_size=tile_size, stride=stride, merge=merge)

    @classmethod
    def from_name(
        cls,
        name: str,
        *,
        tile_size: int = 640,
        stride: int = 512,
        input_full: int | None = None,
        merge: MergeParams = MergeParams(),
    ) -> "Strategy":
        kind = StrategyKind(name)
        if kind == StrategyKind.FULL_640:
            return cls(kind, input_size=input_full or 640, merge=merge)
        if kind == StrategyKind.FULL_1280:
            return cls(kind, input_size=input_full or 1280, merge=merge)
        if kind == StrategyKind.TILE_NMS:
            return cls(kind, tile_size=tile_size, stride=tile_size, merge=merge)
        return cls(kind, tile_size=tile_size, stride=stride, merge=merge)


ALL_STRATEGY_NAMES = [k.value for k in StrategyKind]


@dataclass(frozen=True)
class WorkUnit:
    """One detector invocation: an image region at a target input size."""

    unit_id: str
    image_id: str
    image_path: str | None
    region: Box
    target_input: int
    tile: TileSpec | None = None

    @property
    def scale(self) -> float:
        """Effective longest-side scale the backend sees for this region."""
        return resize_scale(self.region.width, self.region.height, self.target_input)


@dataclass(frozen=True)
class RawDetection:
    """Region-local detector output."""

    box: Box
    score: float
    class_id: int


class DetectorBackend(Protocol):
    backend_id: str

    def detect(self, unit: WorkUnit, image: AnnotatedImage) -> list[RawDetection]: ...


def plan_work(img: AnnotatedImage, strategy: Strategy) -> tuple[list[WorkUnit], TileGrid | None]:
    """Work units for one image: one whole-image unit for Full-k, one per tile otherwise."""
    if not strategy.is_tiled:
        unit = WorkUnit(
            unit_id=f"{img.image_id}:{strategy.kind.value}",
            image_id=img.image_id,
            image_path=img.path,
            region=Box(0.0, 0.0, float(img.width), float(img.height)),
            target_input=strategy.input_size,
        )
        return [unit], None
    grid = plan_grid(img.width, img.height, strategy.tile_size, strategy.stride)
    units = [
        WorkUnit(
            unit_id=f"{img.image_id}:r{t.row}c{t.col}:x{t.x0}y{t.y0}w{t.width}h{t.height}",
            image_id=img.image_id,
            image_path=img.path,
            region=t.rect(),
            target_input=strategy.tile_size,
            tile=t,
        )
        for t in grid.tiles
    ]
    return units, grid


# ---------------------------------------------------------------------------
# backends

@dataclass
class FunctionBackend:
    """Wraps a callable; handy for tests and custom in-process detectors."""

    fn: Callable[[WorkUnit, AnnotatedImage], list[RawDetection]]
    backend_id: str = "function"

    def detect(self, unit: WorkUnit, image: AnnotatedImage) -> list[RawDetection]:
        return self.fn(unit, image)


@dataclass
class SimulatedBackend:
    """Deterministic simulated detector over known ground truth."""

    params: synth.SimDetectorParams
    backend_id: str = "simulated"

    def detect(self, unit: WorkUnit, image: AnnotatedImage) -> list[RawDetection]:
        dets = synth.simulate_detector(
            unit.region, unit.target_input, unit.unit_id, image.annotations, self.params
        )
        return [RawDetection(d.box, d.score, d.class_id) for d in dets]


class PrecomputedBackend:
    """Reads raw per-unit detections from a directory of interchange files.

    One ``{image_id}.jsonl`` per image; tile units match records by tile
    geometry, full-image units match records with no tile and a
    ``full{input}`` strategy tag. A missing file simply yields nothing.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.backend_id = f"precomputed:{self.directory.name}"
        self._cache: dict[str, list[formats.DetectionRecord]] = {}
        index = self.directory / "index.json"
        if index.exists():
            meta = formats.read_json(index)
            if meta.get("backend_id"):
                self.backend_id = str(meta["backend_id"])

    def _records(self, image_id: str) -> list[formats.DetectionRecord]:
        if image_id not in self._cache:
            path = self.directory / f"{image_id}.jsonl"
            self._cache[image_id] = list(formats.read_detections(path)) if path.exists() else []
        return self._cache[image_id]

    def detect(self, unit: WorkUnit, image: AnnotatedImage) -> list[RawDetection]:
        out = []
        for record in self._records(unit.image_id):
            if unit.tile is not None:
                if record.tile is None:
                    continue
                t = record.tile
                if (t["x0"], t["y0"], t["w"], t["h"]) != (
                    unit.tile.x0,
                    unit.tile.y0,
                    unit.tile.width,
                    unit.tile.height,
                ):
                    continue
                box = Box(*(record.box_tile or record.box_global))
            else:
                if record.tile is not None or record.strategy != f"full{unit.target_input}":
                    continue
                box = Box(*record.box_global)
            out.append(RawDetection(box=box, score=record.score, class_id=record.class_id))
        return out


class SubprocessBackend:
    """Drives an external detector process over the JSON-lines protocol.

    Handshake (one line from the backend): ``{"protocol_version": 1,
    "backend_id": ..., "max_in_flight": N}``. Then per work unit a
    request line ``{"unit_id", "image_path", "region": [x0, y0, w, h],
    "target_input"}`` and a response line ``{"unit_id", "detections":
    [{"box": [x1, y1, x2, y2], "score", "class_id"}]}`` (or an "error"
    field). Requests are serialized under a lock, satisfying any
    max_in_flight the backend declares.
    """

    PROTOCOL_VERSION = 1

    def __init__(self, cmd: Sequence[str] | str):
        self.cmd = cmd
        self.backend_id = "subprocess"
        self._proc: subprocess.Popen | None = None
        self._lock = threading.Lock()
        self.max_in_flight = 1

    def _ensure_started(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.cmd,
                shell=isinstance(self.cmd, str),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
            )
            line = self._proc.stdout.readline()
            if not line:
                raise BackendError("backend exited before handshake")
            try:
                handshake = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BackendError(f"bad handshake line: {line!r}") from exc
            if handshake.get("protocol_version") != self.PROTOCOL_VERSION:
                raise BackendError(f"unsupported protocol version: {handshake}")
            self.backend_id = str(handshake.get("backend_id", "subprocess"))
            self.max_in_flight = int(handshake.get("max_in_flight", 1))
        return self._proc

    def detect(self, unit: WorkUnit, image: AnnotatedImage) -> list[RawDetection]:
        request = {
            "unit_id": unit.unit_id,
            "image_path": unit.image_path,
            "region": [unit.region.x1, unit.region.y1, unit.region.width, unit.region.height],
            "target_input": unit.target_input,
        }
        with self._lock:
            proc = self._ensure_started()
            proc.stdin.write(json.dumps(request) + "\n")
            proc.stdin.flush()
            line = proc.stdout.readline()
        if not line:
            raise BackendError(f"backend closed stream during unit {unit.unit_id}")
        response = json.loads(line)
        if response.get("unit_id") != unit.unit_id:
            raise BackendError(
                f"response unit_id {response.get('unit_id')!r} does not echo {unit.unit_id!r}"
            )
        if "error" in response:
            raise BackendError(f"unit {unit.unit_id}: {response['error']}")
        out = []
        for det in response.get("detections", []):
            box = det["box"]
            out.append(
                RawDetection(
                    box=Box(float(box[0]), float(box[1]), float(box[2]), float(box[3])),
                    score=float(det["score"]),
                    class_id=int(det["class_id"]),
                )
            )
        return out

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)
        self._proc = None

    def __enter__(self) -> "SubprocessBackend":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


# ---------------------------------------------------------------------------
# runs

@dataclass
class ImageResult:
    image_id: str
    detections: list[Detection] = field(default_factory=list)
    raw: list[Detection] = field(default_factory=list)
    grid: TileGrid | None = None
    audit: MergeAudit | None = None
    timings_ms: dict[str, float] = field(default_factory=dict)
    failed: bool = False
    error: str | None = None


@dataclass
class RunResult:
    strategy: Strategy
    images: list[ImageResult]
    manifest: dict

    def detections_by_image(self) -> dict[str, list[Detection]]:
        return {r.image_id: r.detections for r in self.images if not r.failed}


def params_hash(config: Mapping) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def strategy_config(strategy: Strategy) -> dict:
    return {
        "strategy": strategy.kind.value,
        "input_size": strategy.input_size,
        "tile_size": strategy.tile_size,
        "stride": strategy.stride,
        "conf": strategy.merge.conf_threshold,
        "nms_iou": strategy.merge.nms_iou,
        "tau": strategy.merge.tau,
        "lambda": strategy.merge.lam,
        "mu": strategy.merge.mu,
    }


def _detect_units(
    units: Sequence[WorkUnit],
    img: AnnotatedImage,
    backend: DetectorBackend,
) -> list[Detection]:
    dets: list[Detection] = []
    for unit in units:
        raw = backend.detect(unit, img)
        if unit.tile is not None:
            for r in raw:
                dets.append(
                    replace(
                        detection_from_tile_box(r.box, r.score, r.class_id, unit.tile),
                        image_id=img.image_id,
                    )
                )
        else:
            for r in raw:
                dets.append(
                    Detection(
                        class_id=r.class_id,
                        score=r.score,
                        box_global=r.box,
                        image_id=img.image_id,
                    )
                )
    return dets


def run_image(img: AnnotatedImage, strategy: Strategy, backend: DetectorBackend) -> ImageResult:
    result = ImageResult(image_id=img.image_id)
    t0 = time.perf_counter()
    try:
        units, grid = plan_work(img, strategy)
        result.grid = grid
        t1 = time.perf_counter()
        raw = _detect_units(units, img, backend)
        t2 = time.perf_counter()
        result.raw = raw
        if strategy.uses_tatm:
            merged, audit = ta_tm_merge(raw, grid, strategy.merge)
            result.audit = audit
        else:
            merged = plain_merge(raw, strategy.merge)
        result.detections = canonical_sort(merged)
        t3 = time.perf_counter()
        result.timings_ms = {
            "plan_ms": (t1 - t0) * 1e3,
            "detect_ms": (t2 - t1) * 1e3,
            "merge_ms": (t3 - t2) * 1e3,
            "total_ms": (t3 - t0) * 1e3,
        }
    except Exception as exc:  # one bad image must not kill the run
        if not isinstance(exc, BackendError):
            log.warning("image %s failed: %s", img.image_id, exc)
        result.failed = True
        result.error = str(exc)
        result.detections = []
        result.timings_ms = {"plan_ms": 0.0, "detect_ms": 0.0, "merge_ms": 0.0, "total_ms": 0.0}
    return result


def run_strategy(
    dataset: Sequence[AnnotatedImage],
    strategy: Strategy,
    backend: DetectorBackend,
    *,
    jobs: int = 1,
    dataset_id: str = "",
    timing: bool = True,
) -> RunResult:
    """Run one strategy over a dataset.

    Images are processed independently (``jobs`` worker threads); output
    order always follows the dataset, so results do not depend on
    parallelism. Failed images are kept in the manifest and excluded
    from detections.
    """
    if jobs <= 1:
        results = [run_image(img, strategy, backend) for img in dataset]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda im: run_image(im, strategy, backend), dataset))

    config = strategy_config(strategy)
    ok = [r for r in results if not r.failed]
    manifest = {
        "dataset_id": dataset_id,
        "strategy": strategy.kind.value,
        "backend_id": backend.backend_id,
        "config": config,
        "params_hash": params_hash(config),
        "images_ok": len(ok),
        "images_failed": len(results) - len(ok),
        "failures": [{"image_id": r.image_id, "error": r.error} for r in results if r.failed],
        "score_boosted_total": sum(r.audit.n_boosted for r in results if r.audit is not None),
        "score_boosted_per_image": {
            r.image_id: r.audit.n_boosted for r in results if r.audit is not None
        },
        "timings_ms": {
            r.image_id: {k: (round(v, 3) if timing else 0.0) for k, v in r.timings_ms.items()}
            for r in results
        },
        "mean_total_ms": (
            round(sum(r.timings_ms["total_ms"] for r in ok) / len(ok), 3) if ok and timing else 0.0
        ),
    }
    return RunResult(strategy=strategy, images=results, manifest=manifest)


def compare_strategies(
    dataset: Sequence[AnnotatedImage],
    strategies: Sequence[Strategy],
    backend: DetectorBackend,
    class_ids: Iterable[int],
    *,
    reference_tile_size: int = 640,
    input_size: int = 640,
    jobs: int = 1,
    timing: bool = True,
) -> dict:
    """Run every strategy with the same backend and build the comparison table."""
    from .evaluation import build_ground_truths, evaluate

    gts = build_ground_truths(
        dataset, reference_tile_size=reference_tile_size, input_size=input_size
    )
    rows = []
    runs = {}
    for strategy in strategies:
        run = run_strategy(dataset, strategy, backend, jobs=jobs, timing=timing)
        report = evaluate(
            run.detections_by_image(),
            gts,
            class_ids,
            conf=strategy.merge.conf_threshold,
            mean_time_ms=run.manifest["mean_total_ms"],
        )
        runs[strategy.kind.value] = (run, report)
        rows.append(
            {
                "strategy": strategy.kind.value,
                "map50": report.map50,
                "recall": report.recall,
                "precision": report.precision,
                "mean_time_ms": run.manifest["mean_total_ms"],
            }
        )
    return {"rows": rows, "runs": runs}


def sweep_tatm_params(
    dataset: Sequence[AnnotatedImage],
    backend: DetectorBackend,
    class_ids: Iterable[int],
    grid_points: Sequence[tuple[float, float]],
    *,
    tile_size: int = 640,
    stride: int = 512,
    base_merge: MergeParams = MergeParams(),
    reference_tile_size: int = 640,
    input_size: int = 640,
    jobs: int = 1,
    timing: bool = True,
) -> dict:
    """Ablation over (tau, lambda): detect once on the overlap grid, re-merge per point.

    The first output row is the overlap-NMS baseline (tau/lambda blank).
    """
    from .evaluation import build_ground_truths, evaluate

    gts = build_ground_truths(
        dataset, reference_tile_size=reference_tile_size, input_size=input_size
    )
    base = Strategy.tile_overlap_nms(tile_size=tile_size, stride=stride, merge=base_merge)
    run = run_strategy(dataset, base, backend, jobs=jobs, timing=timing)

    def evaluate_detections(dets_by_image, conf):
        return evaluate(dets_by_image, gts, class_ids, conf=conf)

    rows = []
    baseline_report = evaluate_detections(run.detections_by_image(), base_merge.conf_threshold)
    rows.append(
        {
            "tau": None,
            "lambda": None,
            "score_boosted": None,
            "score_boosted_per_image_mean": None,
            "map50": baseline_report.map50,
            "recall": baseline_report.recall,
            "boundary_recall_0_16": baseline_report.boundary_bins[0].recall,
        }
    )
    for tau, lam in grid_points:
        merge = replace(base_merge, tau=tau, lam=lam)
        merged_by_image: dict[str, list[Detection]] = {}
        boosted_total = 0
        boosted_counts = []
        for image_result in run.images:
            if image_result.failed:
                continue
            merged, audit = ta_tm_merge(image_result.raw, image_result.grid, merge)
            merged_by_image[image_result.image_id] = canonical_sort(merged)
            boosted_total += audit.n_boosted
            boosted_counts.append(audit.n_boosted)
        report = evaluate_detections(merged_by_image, merge.conf_threshold)
        rows.append(
            {
                "tau": tau,
                "lambda": lam,
                "score_boosted": boosted_total,
                "score_boosted_per_image_mean": (
                    sum(boosted_counts) / len(boosted_counts) if boosted_counts else 0.0
                ),
                "map50": report.map50,
                "recall": report.recall,
                "boundary_recall_0_16": report.boundary_bins[0].recall,
            }
        )
    return {"rows": rows, "base_run": run}
