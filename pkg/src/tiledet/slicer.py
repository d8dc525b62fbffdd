"""Tile-level training-data preparation.

Full-resolution annotated images become per-tile records: each ground
truth is clipped to every tile it intersects and retained where its
visible fraction meets the threshold; tiles with nothing retained stay
in the output as background examples.
"""

from __future__ import annotations

import logging
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .geometry import Box, clip_box
from .tiling import TileSpec, plan_grid

log = logging.getLogger(__name__)

DEFAULT_TILE_SIZE = 640
DEFAULT_STRIDE = 512
DEFAULT_MIN_VISIBILITY = 0.4
DEFAULT_SPLIT_SEED = 42


@dataclass(frozen=True)
class Annotation:
    class_id: int
    box: Box
    ann_id: int | None = None


@dataclass
class AnnotatedImage:
    """One source image: identity, pixel dims, and its global-frame annotations."""

    image_id: str
    path: str | None
    width: int
    height: int
    annotations: list[Annotation] = field(default_factory=list)


@dataclass(frozen=True)
class RetainedAnnotation:
    """A clipped, tile-local annotation that met the visibility threshold."""

    class_id: int
    box: Box
    visible_fraction: float
    multi_tile: bool = False


@dataclass
class TileRecord:
    image_id: str
    tile: TileSpec
    annotations: list[RetainedAnnotation] = field(default_factory=list)

    @property
    def is_background(self) -> bool:
        return not self.annotations

    @property
    def stem(self) -> str:
        return f"{self.image_id}_r{self.tile.row:02d}_c{self.tile.col:02d}"


@dataclass
class SliceSummary:
    n_images: int = 0
    n_tiles: int = 0
    n_positive: int = 0
    n_retained_annotations: int = 0
    per_class_counts: dict[int, int] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)

    @property
    def positive_ratio(self) -> float:
        return self.n_positive / self.n_tiles if self.n_tiles else 0.0

    def to_dict(self) -> dict:
        return {
            "images": self.n_images,
            "tiles": self.n_tiles,
            "positive_tiles": self.n_positive,
            "positive_ratio": self.positive_ratio,
            "retained_annotations": self.n_retained_annotations,
            "per_class_counts": {str(k): v for k, v in sorted(self.per_class_counts.items())},
            "errors": self.errors,
        }


def slice_image(
    img: AnnotatedImage,
    tile_size: int = DEFAULT_TILE_SIZE,
    stride: int = DEFAULT_STRIDE,
    min_visibility: float = DEFAULT_MIN_VISIBILITY,
) -> list[TileRecord]:
    """Slice one image into tile records.

    Every grid tile appears in the output (background or not); a clipped
    annotation is retained in every tile where its visible fraction is
    >= min_visibility (inclusive at the threshold), in tile-local
    coordinates.
    """
    if not 0.0 < min_visibility <= 1.0:
        raise ValueError(f"min_visibility must be in (0, 1], got {min_visibility}")
    grid = plan_grid(img.width, img.height, tile_size, stride)
    records = []
    placements: dict[int, int] = defaultdict(int)
    retained_by_tile: list[list[tuple[int, RetainedAnnotation]]] = []
    for tile in grid.tiles:
        rect = tile.rect()
        retained: list[tuple[int, RetainedAnnotation]] = []
        for ann_index, ann in enumerate(img.annotations):
            clipped, fraction = clip_box(ann.box, rect)
            if clipped is None or fraction < min_visibility:
                continue
            local = Box(
                clipped.x1 - tile.x0, clipped.y1 - tile.y0, clipped.x2 - tile.x0, clipped.y2 - tile.y0
            )
            retained.append(
                (ann_index, RetainedAnnotation(ann.class_id, local, visible_fraction=fraction))
            )
            placements[ann_index] += 1
        retained_by_tile.append(retained)
        records.append(TileRecord(image_id=img.image_id, tile=tile))
    for record, retained in zip(records, retained_by_tile):
        record.annotations = [
            RetainedAnnotation(r.class_id, r.box, r.visible_fraction, multi_tile=placements[i] > 1)
            for i, r in retained
        ]
    return records


def slice_dataset(
    dataset: Iterable[AnnotatedImage],
    tile_size: int = DEFAULT_TILE_SIZE,
    stride: int = DEFAULT_STRIDE,
    min_visibility: float = DEFAULT_MIN_VISIBILITY,
) -> tuple[list[TileRecord], SliceSummary]:
    """Slice every image and aggregate summary statistics.

    Per-image failures are recorded in the summary and the run continues.
    """
    records: list[TileRecord] = []
    summary = SliceSummary()
    per_class: Counter[int] = Counter()
    for img in dataset:
        summary.n_images += 1
        try:
            tile_records = slice_image(img, tile_size, stride, min_visibility)
        except Exception as exc:  # per-image isolation; the error is surfaced in the summary
            summary.errors.append(f"{img.image_id}: {exc}")
            log.warning("slicing failed for %s: %s", img.image_id, exc)
            continue
        for record in tile_records:
            summary.n_tiles += 1
            if not record.is_background:
                summary.n_positive += 1
            for r in record.annotations:
                per_class[r.class_id] += 1
                summary.n_retained_annotations += 1
        records.extend(tile_records)
    summary.per_class_counts = dict(per_class)
    return records, summary


def yolo_line(class_id: int, box: Box, tile_w: int, tile_h: int) -> str:
    """Normalized 'class cx cy w h' line at fixed 6-decimal precision."""
    cx, cy = box.center()
    return (
        f"{class_id} {cx / tile_w:.6f} {cy / tile_h:.6f} "
        f"{box.width / tile_w:.6f} {box.height / tile_h:.6f}"
    )


def _crop_tile(image_path: str, tile: TileSpec):
    from PIL import Image

    with Image.open(image_path) as im:
        return im.crop((tile.x0, tile.y0, tile.x0 + tile.width, tile.y0 + tile.height)).copy()


def emit_training_labels(
    records: Sequence[TileRecord],
    output_dir: str | Path,
    fmt: str = "yolo-txt",
    class_names: Sequence[str] | None = None,
    *,
    tile_size: int = DEFAULT_TILE_SIZE,
    stride: int = DEFAULT_STRIDE,
    write_crops: bool = False,
    image_paths: dict[str, str] | None = None,
) -> dict:
    """Write the tile dataset: labels, tile manifest, class map, summary.

    yolo-txt writes one label file per tile (empty for background tiles);
    crops are written only when decoding is enabled (write_crops with
    per-image paths). coco-json writes one COCO file whose images are the
    tiles. Returns the tile-manifest dict.
    """
    from . import formats

    if fmt not in ("yolo-txt", "coco-json"):
        raise ValueError(f"unknown label format: {fmt!r}")
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)

    manifest: dict = {"tile_size": tile_size, "stride": stride, "images": []}
    by_image: dict[str, list[TileRecord]] = defaultdict(list)
    for record in records:
        by_image[record.image_id].append(record)
    for image_id in sorted(by_image):
        tiles = []
        for record in by_image[image_id]:
            t = record.tile
            tiles.append(
                {
                    "row": t.row,
                    "col": t.col,
                    "x0": t.x0,
                    "y0": t.y0,
                    "w": t.width,
                    "h": t.height,
                    "letterbox": t.width < tile_size or t.height < tile_size,
                    "is_background": record.is_background,
                    "annotations": [
                        {
                            "class_id": r.class_id,
                            "box": [round(v, 6) for v in r.box.as_tuple()],
                            "visible_fraction": round(r.visible_fraction, 6),
                            "multi_tile": r.multi_tile,
                        }
                        for r in record.annotations
                    ],
                }
            )
        manifest["images"].append({"image_id": image_id, "tiles": tiles})

    try:
        if fmt == "yolo-txt":
            labels_dir = out / "labels"
            labels_dir.mkdir(exist_ok=True)
            for record in records:
                lines = [
                    yolo_line(r.class_id, r.box, record.tile.width, record.tile.height)
                    for r in record.annotations
                ]
                (labels_dir / f"{record.stem}.txt").write_text(
                    "".join(line + "\n" for line in lines), encoding="utf-8"
                )
        else:
            formats.write_json(_records_to_coco(records, class_names or []), out / "tiles_coco.json")
    except OSError:
        log.warning("label emission aborted; %s may hold partial output", out)
        raise

    if write_crops:
        if image_paths is None:
            raise ValueError("write_crops requires image_paths")
        images_dir = out / "images"
        images_dir.mkdir(exist_ok=True)
        for record in records:
            path = image_paths.get(record.image_id)
            if path is None or not Path(path).exists():
                log.warning("no image file for %s; crop skipped", record.image_id)
                continue
            suffix = Path(path).suffix or ".png"
            _crop_tile(path, record.tile).save(images_dir / f"{record.stem}{suffix}")

    if class_names:
        formats.write_class_file(class_names, out / "classes.txt")
    formats.write_json(manifest, out / "tile_manifest.json")
    return manifest


def _records_to_coco(records: Sequence[TileRecord], class_names: Sequence[str]) -> dict:
    images = []
    annotations = []
    ann_id = 1
    for i, record in enumerate(records):
        images.append(
            {
                "id": i + 1,
                "file_name": f"{record.stem}.png",
                "width": record.tile.width,
                "height": record.tile.height,
            }
        )
        for r in record.annotations:
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": i + 1,
                    "category_id": r.class_id,
                    "bbox": [round(v, 6) for v in r.box.to_xywh()],
                    "area": round(r.box.area(), 6),
                }
            )
            ann_id += 1
    categories = [{"id": i, "name": name} for i, name in enumerate(class_names)]
    return {"images": images, "annotations": annotations, "categories": categories}


def split_dataset(
    dataset: Sequence[AnnotatedImage],
    ratios: tuple[float, float, float] = (0.7, 0.15, 0.15),
    seed: int = DEFAULT_SPLIT_SEED,
) -> dict[str, list[AnnotatedImage]]:
    """Seeded random train/val/test split (order canonicalized by image_id first)."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    ordered = sorted(dataset, key=lambda im: im.image_id)
    rng = random.Random(seed)
    rng.shuffle(ordered)
    n = len(ordered)
    n_train = round(n * ratios[0])
    n_val = round(n * ratios[1])
    return {
        "train": ordered[:n_train],
        "val": ordered[n_train : n_train + n_val],
        "test": ordered[n_train + n_val :],
    }
