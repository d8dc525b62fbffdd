"""Deterministic tile-grid planning and the tile-adjacency graph.

A grid is the ordered (row-major) set of tile rectangles covering an image.
Column/row origins advance by ``stride`` and the last origin is clamped to
the image edge so every pixel stays covered by full-size tiles; images
smaller than one tile get a single native-size tile (the detector backend
letterboxes those).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .geometry import Box, GeometryError, TileDims


@dataclass(frozen=True)
class TileSpec:
    """One tile: its (row, col) grid index and pixel rectangle."""

    row: int
    col: int
    x0: int
    y0: int
    width: int
    height: int

    def rect(self) -> Box:
        return Box(self.x0, self.y0, self.x0 + self.width, self.y0 + self.height)

    def dims(self) -> TileDims:
        return TileDims(self.width, self.height)

    @property
    def index(self) -> tuple[int, int]:
        return (self.row, self.col)


@dataclass(frozen=True)
class TileGrid:
    """Row-major tile set for one image, plus the planning parameters."""

    image_w: int
    image_h: int
    tile_size: int
    stride: int
    tiles: tuple[TileSpec, ...]

    @property
    def n_rows(self) -> int:
        return 1 + max(t.row for t in self.tiles)

    @property
    def n_cols(self) -> int:
        return 1 + max(t.col for t in self.tiles)

    def tile_map(self) -> dict[tuple[int, int], TileSpec]:
        return {t.index: t for t in self.tiles}


@dataclass(frozen=True)
class AdjacencyGraph:
    """4-connected graph over (row, col) tile indices.

    Each edge is ((a, b), orientation) with a < b; orientation names the
    shared edge ("vertical" for horizontal neighbours, "horizontal" for
    vertical neighbours).
    """

    nodes: frozenset[tuple[int, int]]
    edges: frozenset[tuple[tuple[int, int], tuple[int, int], str]]

    def neighbors(self, node: tuple[int, int]) -> set[tuple[int, int]]:
        out = set()
        for a, b, _ in self.edges:
            if a == node:
                out.add(b)
            elif b == node:
                out.add(a)
        return out

    def has_edge(self, a: tuple[int, int], b: tuple[int, int]) -> bool:
        lo, hi = (a, b) if a <= b else (b, a)
        return any(e[0] == lo and e[1] == hi for e in self.edges)


def _axis_origins(image_dim: int, tile_size: int, stride: int) -> list[int]:
    if image_dim <= tile_size:
        return [0]
    last = image_dim - tile_size
    origins = list(range(0, last + 1, stride))
    if origins[-1] != last:
        origins.append(last)
    return origins


def plan_grid(image_w: int, image_h: int, tile_size: int = 640, stride: int = 640) -> TileGrid:
    """Plan the tile grid for an image.

    Origins are {0, stride, 2*stride, ...} clamped to image_dim - tile_size,
    with the final origin exactly at the clamp (duplicates removed by
    construction). Raises on non-positive dims or stride outside
    (0, tile_size] (a larger stride would leave uncovered gaps).
    """
    if image_w <= 0 or image_h <= 0:
        raise GeometryError(f"image dims must be positive, got {image_w}x{image_h}")
    if tile_size <= 0:
        raise GeometryError(f"tile_size must be positive, got {tile_size}")
    if stride <= 0 or stride > tile_size:
        raise GeometryError(f"stride must be in (0, tile_size], got {stride} (tile {tile_size})")

    xs = _axis_origins(image_w, tile_size, stride)
    ys = _axis_origins(image_h, tile_size, stride)
    w = min(tile_size, image_w)
    h = min(tile_size, image_h)
    tiles = tuple(
        TileSpec(row=r, col=c, x0=x, y0=y, width=w, height=h)
        for r, y in enumerate(ys)
        for c, x in enumerate(xs)
    )
    return TileGrid(image_w=image_w, image_h=image_h, tile_size=tile_size, stride=stride, tiles=tiles)


def build_adjacency(grid: TileGrid) -> AdjacencyGraph:
    """4-connectivity over the grid's (row, col) indices; no diagonals."""
    nodes = frozenset(t.index for t in grid.tiles)
    return adjacency_from_nodes(nodes)


def adjacency_from_nodes(nodes: frozenset[tuple[int, int]]) -> AdjacencyGraph:
    edges = set()
    for r, c in nodes:
        if (r, c + 1) in nodes:
            edges.add(((r, c), (r, c + 1), "vertical"))
        if (r + 1, c) in nodes:
            edges.add(((r, c), (r + 1, c), "horizontal"))
    return AdjacencyGraph(nodes=frozenset(nodes), edges=frozenset(edges))


def interior_boundary_lines(grid: TileGrid) -> tuple[list[float], list[float]]:
    """Interior tile-boundary lines (vertical xs, horizontal ys); image borders excluded."""
    xs: set[float] = set()
    ys: set[float] = set()
    for t in grid.tiles:
        xs.add(float(t.x0))
        xs.add(float(t.x0 + t.width))
        ys.add(float(t.y0))
        ys.add(float(t.y0 + t.height))
    xs -= {0.0, float(grid.image_w)}
    ys -= {0.0, float(grid.image_h)}
    return sorted(xs), sorted(ys)


def nearest_grid_boundary_distance(point: tuple[float, float], grid: TileGrid) -> float:
    """Distance from a point to the nearest interior tile-boundary line.

    Returns math.inf when the grid has no interior boundary (single tile).
    """
    xs, ys = interior_boundary_lines(grid)
    x, y = point
    dist = math.inf
    for line in xs:
        dist = min(dist, abs(x - line))
    for line in ys:
        dist = min(dist, abs(y - line))
    return dist
