import json
import math

import numpy as np
import pytest

from tiledet.formats import grid_to_manifest
from tiledet.geometry import GeometryError
from tiledet.tiling import build_adjacency, nearest_grid_boundary_distance, plan_grid


class TestPlanGrid:
    def test_exact_fit_single_tile(self):
        grid = plan_grid(640, 640, 640, 640)
        assert len(grid.tiles) == 1
        t = grid.tiles[0]
        assert (t.row, t.col, t.x0, t.y0, t.width, t.height) == (0, 0, 0, 0, 640, 640)

    def test_clamped_columns(self):
        grid = plan_grid(1280, 640, 640, 512)
        assert [t.x0 for t in grid.tiles] == [0, 512, 640]
        assert len(grid.tiles) == 3

    def test_median_resolution_5x5(self):
        grid = plan_grid(2617, 2534, 640, 512)
        assert grid.n_cols == 5 and grid.n_rows == 5
        assert len(grid.tiles) == 25
        assert max(t.x0 + t.width for t in grid.tiles) == 2617
        assert max(t.y0 + t.height for t in grid.tiles) == 2534

    def test_small_image_single_native_tile(self):
        grid = plan_grid(500, 400, 640, 512)
        assert len(grid.tiles) == 1
        assert grid.tiles[0].width == 500 and grid.tiles[0].height == 400

    def test_duplicate_origin_deduplicated(self):
        # 1152 - 640 = 512 is exactly one stride: the clamped origin equals it
        grid = plan_grid(1152, 640, 640, 512)
        assert [t.x0 for t in grid.tiles] == [0, 512]

    def test_bad_inputs_rejected(self):
        with pytest.raises(GeometryError):
            plan_grid(0, 100, 640, 512)
        with pytest.raises(GeometryError):
            plan_grid(100, 100, 640, 700)
        with pytest.raises(GeometryError):
            plan_grid(100, 100, 640, 0)

    def test_row_major_order(self):
        grid = plan_grid(1280, 1280, 640, 640)
        assert [(t.row, t.col) for t in grid.tiles] == [(0, 0), (0, 1), (1, 0), (1, 1)]

    def test_determinism_byte_identical_serialization(self):
        a = json.dumps(grid_to_manifest("x", plan_grid(2617, 2534, 640, 512)))
        b = json.dumps(grid_to_manifest("x", plan_grid(2617, 2534, 640, 512)))
        assert a == b


def coverage_counts(grid) -> np.ndarray:
    counts = np.zeros((grid.image_h, grid.image_w), dtype=np.int32)
    for t in grid.tiles:
        counts[t.y0 : t.y0 + t.height, t.x0 : t.x0 + t.width] += 1
    return counts


class TestCoverage:
    @pytest.mark.parametrize("w,h", [(640, 640), (737, 931), (1028, 1028), (1313, 977)])
    @pytest.mark.parametrize("stride", [512, 640])
    def test_every_pixel_covered(self, w, h, stride):
        grid = plan_grid(w, h, 640, stride)
        assert coverage_counts(grid).min() >= 1

    def test_overlap_band_double_covered(self):
        # every pixel of a tile within (tile - stride) px of one of the tile's
        # interior edges is also covered by a neighbouring tile
        grid = plan_grid(1700, 1700, 640, 512)
        counts = coverage_counts(grid)
        band = grid.tile_size - grid.stride
        for t in grid.tiles:
            x2, y2 = t.x0 + t.width, t.y0 + t.height
            if t.x0 > 0:
                assert counts[t.y0 : y2, t.x0 : t.x0 + band].min() >= 2
            if x2 < grid.image_w:
                assert counts[t.y0 : y2, x2 - band : x2].min() >= 2
            if t.y0 > 0:
                assert counts[t.y0 : t.y0 + band, t.x0 : x2].min() >= 2
            if y2 < grid.image_h:
                assert counts[y2 - band : y2, t.x0 : x2].min() >= 2

    def test_tile_count_monotone_in_stride(self):
        sizes = [(977, 1313), (1280, 1280), (2617, 2534)]
        for w, h in sizes:
            counts = [len(plan_grid(w, h, 640, s).tiles) for s in (640, 512, 320, 160)]
            assert counts == sorted(counts)


class TestAdjacency:
    def test_single_tile_no_edges(self):
        graph = build_adjacency(plan_grid(640, 640, 640, 640))
        assert len(graph.edges) == 0

    def test_2x2_four_edges(self):
        graph = build_adjacency(plan_grid(1280, 1280, 640, 640))
        assert len(graph.edges) == 4

    def test_5x5_forty_edges(self):
        graph = build_adjacency(plan_grid(2617, 2534, 640, 512))
        assert len(graph.edges) == 40  # 5*4 + 5*4

    def test_edge_count_formula(self):
        for w, h in [(1280, 640), (1920, 1280), (3200, 2560)]:
            grid = plan_grid(w, h, 640, 640)
            graph = build_adjacency(grid)
            r, c = grid.n_rows, grid.n_cols
            assert len(graph.edges) == r * (c - 1) + c * (r - 1)

    def test_no_diagonals_and_orientation(self):
        graph = build_adjacency(plan_grid(1280, 1280, 640, 640))
        for a, b, orientation in graph.edges:
            dr, dc = abs(a[0] - b[0]), abs(a[1] - b[1])
            assert dr + dc == 1
            assert orientation == ("vertical" if dc == 1 else "horizontal")

    def test_neighbors(self):
        graph = build_adjacency(plan_grid(1920, 1920, 640, 640))
        assert graph.neighbors((1, 1)) == {(0, 1), (2, 1), (1, 0), (1, 2)}
        assert graph.neighbors((0, 0)) == {(0, 1), (1, 0)}


class TestNearestBoundaryDistance:
    def test_on_boundary_line(self):
        grid = plan_grid(1280, 1280, 640, 640)
        assert nearest_grid_boundary_distance((640, 100), grid) == 0.0

    def test_single_tile_sentinel(self):
        grid = plan_grid(640, 640, 640, 640)
        assert math.isinf(nearest_grid_boundary_distance((320, 320), grid))

    def test_ten_px_from_line(self):
        grid = plan_grid(1280, 1280, 640, 640)
        assert nearest_grid_boundary_distance((650, 100), grid) == 10.0

    def test_image_borders_excluded(self):
        grid = plan_grid(1280, 1280, 640, 640)
        # nearest interior line to (5, 5) is x=640 or y=640, not the border at 0
        assert nearest_grid_boundary_distance((5.0, 5.0), grid) == 635.0
