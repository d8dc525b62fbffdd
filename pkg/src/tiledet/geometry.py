"""Axis-aligned box arithmetic shared by every pipeline stage.

Coordinates are real-valued pixels throughout; callers pick the frame
(tile-local or global) and nothing here rounds. Rounding happens only at
image-crop extraction time, elsewhere in the package.
"""

from __future__ import annotations

from dataclasses import dataclass


class GeometryError(ValueError):
    """Malformed box, bad scale, or detector output outside its tile."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle with x1 <= x2 and y1 <= y2."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        if not (self.x1 <= self.x2 and self.y1 <= self.y2):
            raise GeometryError(f"malformed box: ({self.x1}, {self.y1}, {self.x2}, {self.y2})")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    def area(self) -> float:
        return self.width * self.height

    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "Box":
        if w < 0 or h < 0:
            raise GeometryError(f"negative extent: w={w}, h={h}")
        return cls(x, y, x + w, y + h)

    def to_xywh(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.width, self.height)

    def contains(self, other: "Box") -> bool:
        return (
            self.x1 <= other.x1
            and self.y1 <= other.y1
            and other.x2 <= self.x2
            and other.y2 <= self.y2
        )


@dataclass(frozen=True)
class TileDims:
    """Width/height of one tile in pixels."""

    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise GeometryError(f"tile dims must be positive: {self.width}x{self.height}")


@dataclass(frozen=True)
class EdgeDistances:
    """Per-edge distances of a tile-local box to the four tile edges."""

    left: float
    top: float
    right: float
    bottom: float

    @property
    def nearest(self) -> float:
        """min(x1, y1, Wt - x2, Ht - y2): distance to the nearest tile edge."""
        return min(self.left, self.top, self.right, self.bottom)

    def as_dict(self) -> dict[str, float]:
        return {"left": self.left, "top": self.top, "right": self.right, "bottom": self.bottom}


def iou(a: Box, b: Box) -> float:
    """Intersection-over-union of two boxes.

    Identical boxes give 1.0 even when degenerate; disjoint or zero-area
    overlaps give 0.0.
    """
    if a == b:
        return 1.0
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area() + b.area() - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def clip_box(box: Box, rect: Box) -> tuple[Box | None, float]:
    """Clip ``box`` to ``rect``; returns (clipped, visible area fraction).

    (None, 0.0) when the intersection is empty or ``box`` has zero area.
    """
    area = box.area()
    if area <= 0.0:
        return None, 0.0
    ix1 = max(box.x1, rect.x1)
    iy1 = max(box.y1, rect.y1)
    ix2 = min(box.x2, rect.x2)
    iy2 = min(box.y2, rect.y2)
    if ix2 - ix1 <= 0.0 or iy2 - iy1 <= 0.0:
        return None, 0.0
    clipped = Box(ix1, iy1, ix2, iy2)
    return clipped, clipped.area() / area


def boundary_distance(box: Box, tile: TileDims, *, slop: float = 2.0) -> EdgeDistances:
    """Distance of a tile-local box to each tile edge.

    Boxes up to ``slop`` pixels outside the tile (detector numeric slop)
    are clipped before measuring; anything further out signals corrupt
    detector output and raises.
    """
    w, h = float(tile.width), float(tile.height)
    if box.x2 <= 0.0 or box.y2 <= 0.0 or box.x1 >= w or box.y1 >= h:
        raise GeometryError(f"box {box.as_tuple()} lies entirely outside {tile.width}x{tile.height} tile")
    if box.x1 < -slop or box.y1 < -slop or box.x2 > w + slop or box.y2 > h + slop:
        raise GeometryError(
            f"box {box.as_tuple()} exceeds {tile.width}x{tile.height} tile by more than {slop} px"
        )
    x1 = min(max(box.x1, 0.0), w)
    y1 = min(max(box.y1, 0.0), h)
    x2 = min(max(box.x2, 0.0), w)
    y2 = min(max(box.y2, 0.0), h)
    return EdgeDistances(left=x1, top=y1, right=w - x2, bottom=h - y2)


def clip_to_tile(box: Box, tile: TileDims, *, slop: float = 2.0) -> Box:
    """Clip a tile-local detector box to the tile, tolerating ``slop`` px overshoot."""
    boundary_distance(box, tile, slop=slop)  # validation only
    return Box(
        min(max(box.x1, 0.0), float(tile.width)),
        min(max(box.y1, 0.0), float(tile.height)),
        min(max(box.x2, 0.0), float(tile.width)),
        min(max(box.y2, 0.0), float(tile.height)),
    )


def remap_to_global(box: Box, origin: tuple[float, float]) -> Box:
    """Translate a tile-local box into global coordinates by the tile's top-left offset."""
    x0, y0 = origin
    return Box(box.x1 + x0, box.y1 + y0, box.x2 + x0, box.y2 + y0)


def rescale_box(box: Box, scale: float) -> Box:
    """Multiply every coordinate by ``scale`` (> 0); area scales by scale**2."""
    if scale <= 0.0:
        raise GeometryError(f"scale must be positive, got {scale}")
    return Box(box.x1 * scale, box.y1 * scale, box.x2 * scale, box.y2 * scale)


def resize_scale(image_w: float, image_h: float, input_size: float) -> float:
    """Scale factor that maps the image's longest side onto ``input_size``."""
    if input_size <= 0:
        raise GeometryError(f"input_size must be positive, got {input_size}")
    if image_w < 1 or image_h < 1:
        raise GeometryError(f"image dims must be >= 1, got {image_w}x{image_h}")
    return float(input_size) / float(max(image_w, image_h))


def apparent_area(box: Box, image_w: int, image_h: int, input_size: int) -> float:
    """Box area after rescaling the image so its longest side equals ``input_size``."""
    s = resize_scale(image_w, image_h, input_size)
    return box.area() * s * s
