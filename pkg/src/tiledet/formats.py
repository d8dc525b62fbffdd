"""Readers/writers for every on-disk artifact.

Writers are deterministic: fixed key order, floats quantized to six
decimals, newline-terminated output. Readers validate and report
per-record/per-line errors.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .geometry import Box
from .merging import Detection
from .slicer import AnnotatedImage, Annotation
from .tiling import TileGrid, TileSpec

log = logging.getLogger(__name__)


class FormatError(ValueError):
    """Malformed input file or record."""


def round6(value: float) -> float:
    return round(float(value), 6)


def write_json(obj, path: str | Path) -> None:
    """Deterministic JSON: insertion-ordered keys, trailing newline."""
    Path(path).write_text(json.dumps(obj, indent=2, allow_nan=False) + "\n", encoding="utf-8")


def read_json(path: str | Path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# class maps

@dataclass(frozen=True)
class ClassMap:
    """Contiguous class ids (list position) with original source ids."""

    names: tuple[str, ...]
    source_ids: tuple[int, ...]

    def index_of_source(self, source_id: int) -> int:
        return self.source_ids.index(source_id)


def write_class_file(names: Sequence[str], path: str | Path) -> None:
    Path(path).write_text("".join(f"{n}\n" for n in names), encoding="utf-8")


def read_class_file(path: str | Path) -> list[str]:
    return [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def read_alias_map(path: str | Path) -> dict[str, str]:
    """Explicit class-name alias file: one 'alias = canonical' per line.

    Cross-dataset analogs are never aliased automatically; matching is by
    exact name unless a mapping is given here.
    """
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'alias = canonical', got {raw!r}")
        alias, canonical = (part.strip() for part in line.split("=", 1))
        out[alias] = canonical
    return out


def class_index_mapping(
    source_names: Sequence[str],
    target_names: Sequence[str],
    aliases: dict[str, str] | None = None,
) -> dict[int, int]:
    """Map source class indices onto target indices by exact name.

    ``aliases`` translates source names first. Unmapped names are omitted
    (callers decide whether that is an error).
    """
    aliases = aliases or {}
    target_index = {name: i for i, name in enumerate(target_names)}
    out: dict[int, int] = {}
    for i, name in enumerate(source_names):
        canonical = aliases.get(name, name)
        if canonical in target_index:
            out[i] = target_index[canonical]
    return out


# ---------------------------------------------------------------------------
# COCO subset

def read_coco(path: str | Path, *, strict: bool = True) -> tuple[list[AnnotatedImage], ClassMap]:
    """Read the bbox subset of a COCO JSON file.

    bbox [x, y, w, h] becomes an (x1, y1, x2, y2) box clipped to image
    bounds; category ids map to contiguous class ids in ascending-id
    order. Zero-area boxes are dropped with a warning; structural errors
    are collected per record and raise in strict mode.
    """
    data = read_json(path)
    errors: list[str] = []
    for key in ("images", "annotations", "categories"):
        if key not in data:
            raise FormatError(f"{path}: missing top-level '{key}' array")

    categories = sorted(data["categories"], key=lambda c: c["id"])
    class_map = ClassMap(
        names=tuple(str(c["name"]) for c in categories),
        source_ids=tuple(int(c["id"]) for c in categories),
    )
    cat_to_class = {src: i for i, src in enumerate(class_map.source_ids)}

    images: dict[int, AnnotatedImage] = {}
    for rec in data["images"]:
        try:
            images[int(rec["id"])] = AnnotatedImage(
                image_id=str(rec.get("file_name", rec["id"])).rsplit(".", 1)[0].replace("/", "_"),
                path=rec.get("file_name"),
                width=int(rec["width"]),
                height=int(rec["height"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(f"image record {rec.get('id')!r}: {exc}")

    for ann in data["annotations"]:
        ann_id = ann.get("id")
        image_id = ann.get("image_id")
        if image_id not in images:
            errors.append(f"annotation {ann_id}: references absent image {image_id}")
            continue
        if "segmentation" in ann or ann.get("iscrowd"):
            log.warning("annotation %s: segmentation/crowd fields ignored", ann_id)
        img = images[image_id]
        try:
            x, y, w, h = (float(v) for v in ann["bbox"])
            if w < 0 or h < 0:
                raise FormatError(f"negative extent {w}x{h}")
            box = Box.from_xywh(x, y, w, h)
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(f"annotation {ann_id}: bad bbox ({exc})")
            continue
        category = ann.get("category_id")
        if category not in cat_to_class:
            errors.append(f"annotation {ann_id}: unknown category {category}")
            continue
        clipped = Box(
            min(max(box.x1, 0.0), img.width),
            min(max(box.y1, 0.0), img.height),
            min(max(box.x2, 0.0), img.width),
            min(max(box.y2, 0.0), img.height),
        )
        if clipped.area() <= 0.0:
            log.warning("annotation %s: degenerate zero-area box dropped", ann_id)
            continue
        img.annotations.append(
            Annotation(class_id=cat_to_class[category], box=clipped, ann_id=ann_id)
        )

    if errors and strict:
        raise FormatError(f"{path}: {len(errors)} bad records: " + "; ".join(errors[:5]))
    ordered = [images[k] for k in sorted(images)]
    return ordered, class_map


def write_coco(dataset: Sequence[AnnotatedImage], class_names: Sequence[str], path: str | Path) -> None:
    """Write the COCO subset produced by read_coco (round-trip partner)."""
    images = []
    annotations = []
    ann_id = 1
    for i, img in enumerate(sorted(dataset, key=lambda im: im.image_id)):
        images.append(
            {
                "id": i + 1,
                "file_name": img.path or f"{img.image_id}.png",
                "width": img.width,
                "height": img.height,
            }
        )
        for ann in img.annotations:
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": i + 1,
                    "category_id": ann.class_id,
                    "bbox": [round6(v) for v in ann.box.to_xywh()],
                    "area": round6(ann.box.area()),
                }
            )
            ann_id += 1
    write_json(
        {
            "images": images,
            "annotations": annotations,
            "categories": [{"id": i, "name": n} for i, n in enumerate(class_names)],
        },
        path,
    )


# ---------------------------------------------------------------------------
# YOLO label trees

def read_yolo(
    labels_dir: str | Path,
    images: Sequence[AnnotatedImage],
    *,
    strict: bool = True,
) -> list[AnnotatedImage]:
    """Attach YOLO-format labels ('class cx cy w h', normalized) to image metadata.

    A missing or empty label file means a background image.
    """
    labels_dir = Path(labels_dir)
    errors: list[str] = []
    out: list[AnnotatedImage] = []
    for meta in images:
        img = AnnotatedImage(meta.image_id, meta.path, meta.width, meta.height)
        label_path = labels_dir / f"{meta.image_id}.txt"
        if label_path.exists():
            for lineno, line in enumerate(label_path.read_text(encoding="utf-8").splitlines(), 1):
                line = line.strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 5:
                    errors.append(f"{label_path.name}:{lineno}: expected 5 tokens, got {len(parts)}")
                    continue
                try:
                    class_id = int(parts[0])
                    cx, cy, w, h = (float(v) for v in parts[1:])
                except ValueError as exc:
                    errors.append(f"{label_path.name}:{lineno}: {exc}")
                    continue
                if not all(0.0 <= v <= 1.0 for v in (cx, cy, w, h)):
                    errors.append(f"{label_path.name}:{lineno}: value outside [0, 1]")
                    continue
                img.annotations.append(
                    Annotation(
                        class_id=class_id,
                        box=Box(
                            (cx - w / 2) * meta.width,
                            (cy - h / 2) * meta.height,
                            (cx + w / 2) * meta.width,
                            (cy + h / 2) * meta.height,
                        ),
                    )
                )
        out.append(img)
    if errors and strict:
        raise FormatError(f"{labels_dir}: {len(errors)} bad lines: " + "; ".join(errors[:5]))
    return out


def write_yolo(dataset: Sequence[AnnotatedImage], labels_dir: str | Path) -> None:
    labels_dir = Path(labels_dir)
    labels_dir.mkdir(parents=True, exist_ok=True)
    for img in dataset:
        lines = []
        for ann in img.annotations:
            cx, cy = ann.box.center()
            lines.append(
                f"{ann.class_id} {cx / img.width:.6f} {cy / img.height:.6f} "
                f"{ann.box.width / img.width:.6f} {ann.box.height / img.height:.6f}"
            )
        (labels_dir / f"{img.image_id}.txt").write_text(
            "".join(line + "\n" for line in lines), encoding="utf-8"
        )


# ---------------------------------------------------------------------------
# grid manifests

def grid_to_manifest(image_id: str, grid: TileGrid) -> dict:
    return {
        "image_id": image_id,
        "image_w": grid.image_w,
        "image_h": grid.image_h,
        "tile_size": grid.tile_size,
        "stride": grid.stride,
        "tiles": [
            {"row": t.row, "col": t.col, "x0": t.x0, "y0": t.y0, "w": t.width, "h": t.height}
            for t in grid.tiles
        ],
    }


def grid_from_manifest(manifest: dict) -> TileGrid:
    tiles = tuple(
        TileSpec(row=t["row"], col=t["col"], x0=t["x0"], y0=t["y0"], width=t["w"], height=t["h"])
        for t in manifest["tiles"]
    )
    return TileGrid(
        image_w=manifest["image_w"],
        image_h=manifest["image_h"],
        tile_size=manifest["tile_size"],
        stride=manifest["stride"],
        tiles=tiles,
    )


# ---------------------------------------------------------------------------
# detection interchange (NDJSON)

_RECORD_KEYS = (
    "image_id",
    "strategy",
    "tile",
    "box_tile",
    "box_global",
    "score",
    "class_id",
    "class_name",
    "boundary_distance",
    "agreement",
    "adjusted_score",
)


@dataclass(frozen=True)
class DetectionRecord:
    """One interchange line: a detection plus its provenance."""

    image_id: str
    strategy: str
    box_global: tuple[float, float, float, float]
    score: float
    class_id: int
    tile: dict | None = None
    box_tile: tuple[float, float, float, float] | None = None
    class_name: str | None = None
    boundary_distance: float | None = None
    agreement: float | None = None
    adjusted_score: float | None = None

    def to_obj(self) -> dict:
        tile = None
        if self.tile is not None:
            tile = {k: self.tile[k] for k in ("row", "col", "x0", "y0", "w", "h")}
        return {
            "image_id": self.image_id,
            "strategy": self.strategy,
            "tile": tile,
            "box_tile": None if self.box_tile is None else [round6(v) for v in self.box_tile],
            "box_global": [round6(v) for v in self.box_global],
            "score": round6(self.score),
            "class_id": self.class_id,
            "class_name": self.class_name,
            "boundary_distance": None
            if self.boundary_distance is None or math.isinf(self.boundary_distance)
            else round6(self.boundary_distance),
            "agreement": None if self.agreement is None else round6(self.agreement),
            "adjusted_score": None if self.adjusted_score is None else round6(self.adjusted_score),
        }


def _require_box(value, name: str) -> tuple[float, float, float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 4:
        raise FormatError(f"{name} must be a 4-element array")
    x1, y1, x2, y2 = (float(v) for v in value)
    if x1 > x2 or y1 > y2:
        raise FormatError(f"{name} is malformed: {value}")
    return (x1, y1, x2, y2)


def _require_score(value, name: str) -> float:
    v = float(value)
    if not 0.0 <= v <= 1.0:
        raise FormatError(f"{name} must be in [0, 1], got {value}")
    return v


def record_from_obj(obj: dict) -> DetectionRecord:
    """Parse and validate one interchange object (unknown keys tolerated)."""
    try:
        tile = obj.get("tile")
        if tile is not None:
            tile = {k: int(tile[k]) for k in ("row", "col", "x0", "y0", "w", "h")}
        return DetectionRecord(
            image_id=str(obj["image_id"]),
            strategy=str(obj.get("strategy", "")),
            tile=tile,
            box_tile=None if obj.get("box_tile") is None else _require_box(obj["box_tile"], "box_tile"),
            box_global=_require_box(obj["box_global"], "box_global"),
            score=_require_score(obj["score"], "score"),
            class_id=int(obj["class_id"]),
            class_name=obj.get("class_name"),
            boundary_distance=None
            if obj.get("boundary_distance") is None
            else float(obj["boundary_distance"]),
            agreement=None if obj.get("agreement") is None else _require_score(obj["agreement"], "agreement"),
            adjusted_score=None
            if obj.get("adjusted_score") is None
            else _require_score(obj["adjusted_score"], "adjusted_score"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(str(exc)) from exc


def write_detections(records: Iterable[DetectionRecord], path: str | Path) -> None:
    """Newline-delimited JSON, one record per line, fixed key order."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_obj(), allow_nan=False) + "\n")


def read_detections(path: str | Path) -> Iterator[DetectionRecord]:
    """Stream records; malformed lines raise with their line number."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield record_from_obj(json.loads(line))
            except (json.JSONDecodeError, FormatError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc


def detection_to_record(
    det: Detection,
    strategy: str,
    tiles: dict[tuple[int, int], TileSpec] | None = None,
) -> DetectionRecord:
    tile = None
    if det.tile is not None and tiles is not None and det.tile in tiles:
        t = tiles[det.tile]
        tile = {"row": t.row, "col": t.col, "x0": t.x0, "y0": t.y0, "w": t.width, "h": t.height}
    return DetectionRecord(
        image_id=det.image_id or "",
        strategy=strategy,
        tile=tile,
        box_tile=None if det.box_tile is None else det.box_tile.as_tuple(),
        box_global=det.box_global.as_tuple(),
        score=det.score,
        class_id=det.class_id,
        class_name=det.class_name,
        boundary_distance=det.boundary_distance,
        agreement=det.agreement,
        adjusted_score=det.adjusted_score,
    )


def record_to_detection(record: DetectionRecord) -> tuple[Detection, TileSpec | None]:
    """Rebuild a Detection (and its TileSpec when present) from an interchange record."""
    tile_spec = None
    tile_index = None
    if record.tile is not None:
        t = record.tile
        tile_spec = TileSpec(row=t["row"], col=t["col"], x0=t["x0"], y0=t["y0"], width=t["w"], height=t["h"])
        tile_index = tile_spec.index
    det = Detection(
        class_id=record.class_id,
        score=record.score,
        box_global=Box(*record.box_global),
        box_tile=None if record.box_tile is None else Box(*record.box_tile),
        tile=tile_index,
        boundary_distance=record.boundary_distance,
        agreement=record.agreement,
        adjusted_score=record.adjusted_score,
        class_name=record.class_name,
        image_id=record.image_id,
    )
    return det, tile_spec


# ---------------------------------------------------------------------------
# report tables

def _format_cell(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def write_table_csv(headers: Sequence[str], rows: Sequence[Sequence], path: str | Path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(headers)
    for row in rows:
        writer.writerow([_format_cell(v) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_table_markdown(
    title: str, headers: Sequence[str], rows: Sequence[Sequence], path: str | Path
) -> None:
    lines = [f"# {title}", ""]
    lines.append("| " + " | ".join(headers) + " |")
    lines.append("|" + "|".join(" --- " for _ in headers) + "|")
    for row in rows:
        lines.append("| " + " | ".join(_format_cell(v) for v in row) + " |")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
