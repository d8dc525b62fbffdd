import math
import sys
from pathlib import Path

import pytest

from tiledet.evaluation import build_ground_truths, evaluate, recall_by_boundary_bin
from tiledet.formats import detection_to_record, write_detections
from tiledet.geometry import Box, clip_box
from tiledet.merging import MergeParams
from tiledet.pipeline import (
    BackendError,
    FunctionBackend,
    PrecomputedBackend,
    RawDetection,
    SimulatedBackend,
    Strategy,
    StrategyKind,
    SubprocessBackend,
    compare_strategies,
    plan_work,
    run_strategy,
    sweep_tatm_params,
)
from tiledet.slicer import AnnotatedImage, Annotation
from tiledet.synth import (
    SimDetectorParams,
    adversarial_split_suite,
    boundary_suite,
    scenario_to_dataset,
)

STUB = [sys.executable, str(Path(__file__).parent / "stub_backend.py")]


def simple_image(w=1280, h=1280, image_id="im0", boxes=()):
    return AnnotatedImage(
        image_id=image_id, path=None, width=w, height=h,
        annotations=[Annotation(class_id=c, box=b) for c, b in boxes],
    )


class TestStrategy:
    def test_constructors_and_invariants(self):
        assert Strategy.full640().input_size == 640
        assert Strategy.full1280().input_size == 1280
        assert Strategy.tile_nms().stride == 640
        assert Strategy.tile_overlap_nms().stride == 512
        with pytest.raises(ValueError):
            Strategy(StrategyKind.TILE_NMS, stride=512)
        with pytest.raises(ValueError):
            Strategy(StrategyKind.TILE_OVERLAP_NMS, stride=640)

    def test_from_name(self):
        s = Strategy.from_name("tile_overlap_tatm", tile_size=640, stride=512)
        assert s.uses_tatm and s.is_tiled


class TestPlanWork:
    def test_full_single_unit_scale(self):
        units, grid = plan_work(simple_image(640, 480), Strategy.full640())
        assert grid is None and len(units) == 1
        assert units[0].scale == 1.0
        units, _ = plan_work(simple_image(2560, 1920), Strategy.full1280())
        assert units[0].scale == 0.5

    def test_tile_units_match_grid(self):
        units, grid = plan_work(simple_image(2617, 2534), Strategy.tile_overlap_nms())
        assert grid is not None and len(units) == 25
        assert [u.tile.index for u in units] == [t.index for t in grid.tiles]

    def test_deterministic(self):
        img = simple_image(1280, 977)
        a, _ = plan_work(img, Strategy.tile_overlap_nms())
        b, _ = plan_work(img, Strategy.tile_overlap_nms())
        assert a == b


class TestBackendCalls:
    def test_call_counts(self):
        calls = []
        backend = FunctionBackend(lambda unit, img: calls.append(unit.unit_id) or [])
        img = simple_image(1280, 1280)
        run_strategy([img], Strategy.tile_overlap_nms(), backend)
        assert len(calls) == 9  # 3x3 overlap grid
        calls.clear()
        run_strategy([img], Strategy.full640(), backend)
        assert len(calls) == 1


class TestCoordinateRoundTrip:
    target = Box(700.25, 650.5, 760.75, 700.125)

    def _tile_backend(self):
        def fn(unit, img):
            clipped, fraction = clip_box(self.target, unit.region)
            if fraction < 1.0 or clipped is None:
                return []
            return [RawDetection(
                Box(clipped.x1 - unit.region.x1, clipped.y1 - unit.region.y1,
                    clipped.x2 - unit.region.x1, clipped.y2 - unit.region.y1), 0.9, 0)]
        return FunctionBackend(fn)

    def test_tiles_round_trip_exact(self):
        img = simple_image(1280, 1280)
        run = run_strategy([img], Strategy.tile_overlap_nms(), self._tile_backend())
        dets = run.images[0].detections
        assert dets
        for got, want in zip(dets[0].box_global.as_tuple(), self.target.as_tuple()):
            assert abs(got - want) < 1e-6

    def test_full_resize_quantization(self):
        # the backend quantizes to whole input pixels then maps back
        def fn(unit, img):
            s = unit.scale
            q = [round(v * s) / s for v in self.target.as_tuple()]
            return [RawDetection(Box(*q), 0.9, 0)]

        img = simple_image(1280, 1280)
        run = run_strategy([img], Strategy.full640(), FunctionBackend(fn))
        got = run.images[0].detections[0].box_global
        scale = 640 / 1280
        for g, want in zip(got.as_tuple(), self.target.as_tuple()):
            assert abs(g - want) <= 0.5 / scale
        # at scale 1.0 the error bound is the literal half pixel
        img_small = simple_image(640, 640)
        target_small = Box(100.3, 200.6, 150.2, 260.9)
        self.target_backup, self.target = self.target, target_small
        try:
            run = run_strategy([img_small], Strategy.full640(), FunctionBackend(fn))
        finally:
            self.target = self.target_backup
        got = run.images[0].detections[0].box_global
        for g, want in zip(got.as_tuple(), target_small.as_tuple()):
            assert abs(g - want) <= 0.5


class TestRunStrategy:
    def test_timings_nonnegative_and_sum(self):
        backend = FunctionBackend(lambda unit, img: [])
        run = run_strategy([simple_image()], Strategy.tile_nms(), backend)
        t = run.images[0].timings_ms
        assert all(v >= 0 for v in t.values())
        assert t["total_ms"] == pytest.approx(t["plan_ms"] + t["detect_ms"] + t["merge_ms"], rel=0.5, abs=5.0)

    def test_backend_failure_marks_image_and_continues(self):
        def fn(unit, img):
            if img.image_id == "bad":
                raise BackendError("boom")
            return []

        good, bad = simple_image(image_id="good"), simple_image(image_id="bad")
        run = run_strategy([bad, good], Strategy.full640(), FunctionBackend(fn))
        assert run.manifest["images_failed"] == 1
        assert run.manifest["failures"][0]["image_id"] == "bad"
        assert not run.images[1].failed

    def test_jobs_parallel_identical_results(self):
        spec, params = boundary_suite()
        dataset, _ = scenario_to_dataset(spec)
        backend = SimulatedBackend(params)
        strategy = Strategy.tile_overlap_tatm()
        r1 = run_strategy(dataset, strategy, backend, jobs=1)
        r8 = run_strategy(dataset, strategy, backend, jobs=8)
        d1 = {r.image_id: [(d.class_id, d.box_global, d.final_score) for d in r.detections] for r in r1.images}
        d8 = {r.image_id: [(d.class_id, d.box_global, d.final_score) for d in r.detections] for r in r8.images}
        assert d1 == d8

    def test_lambda_zero_matches_overlap_nms_exactly(self):
        spec, params = adversarial_split_suite()
        dataset, _ = scenario_to_dataset(spec)
        backend = SimulatedBackend(params)
        merge0 = MergeParams(lam=0.0)
        tatm = run_strategy(dataset, Strategy.tile_overlap_tatm(merge=merge0), backend)
        nms = run_strategy(dataset, Strategy.tile_overlap_nms(merge=merge0), backend)
        for a, b in zip(tatm.images, nms.images):
            assert [(d.class_id, d.box_global, d.final_score) for d in a.detections] == [
                (d.class_id, d.box_global, d.final_score) for d in b.detections
            ]


class TestDirectionalBehaviour:
    def test_boundary_bin_recall_ordering(self):
        spec, params = boundary_suite()
        dataset, _ = scenario_to_dataset(spec)
        backend = SimulatedBackend(params)
        gts = build_ground_truths(dataset)
        recalls = {}
        for strategy in (Strategy.tile_nms(), Strategy.tile_overlap_nms()):
            run = run_strategy(dataset, strategy, backend)
            bins = recall_by_boundary_bin(run.detections_by_image(), gts)
            recalls[strategy.kind.value] = bins[0].recall
        assert recalls["tile_nms"] < recalls["tile_overlap_nms"]


class TestPrecomputedBackend:
    def test_empty_directory_zero_detections(self, tmp_path):
        backend = PrecomputedBackend(tmp_path)
        dataset = [simple_image(image_id="missing")]
        run = run_strategy(dataset, Strategy.tile_overlap_nms(), backend)
        assert run.images[0].detections == []
        assert run.manifest["images_failed"] == 0

    def test_matches_simulated_run(self, tmp_path):
        spec, params = adversarial_split_suite()
        dataset, _ = scenario_to_dataset(spec)
        sim = SimulatedBackend(params)
        strategy = Strategy.tile_overlap_tatm()
        live = run_strategy(dataset, strategy, sim)
        # export raw per-tile records, one interchange file per image
        for image_result in live.images:
            tiles = image_result.grid.tile_map()
            records = [
                detection_to_record(d, strategy.kind.value, tiles) for d in image_result.raw
            ]
            write_detections(records, tmp_path / f"{image_result.image_id}.jsonl")
        precomputed = PrecomputedBackend(tmp_path)
        replayed = run_strategy(dataset, strategy, precomputed)
        for a, b in zip(live.images, replayed.images):
            got = [(d.class_id, d.box_global.as_tuple(), round(d.final_score, 6)) for d in b.detections]
            want = [(d.class_id, d.box_global.as_tuple(), round(d.final_score, 6)) for d in a.detections]
            assert got == want


class TestSubprocessBackend:
    def test_handshake_and_detection(self):
        with SubprocessBackend(STUB) as backend:
            run = run_strategy([simple_image(640, 640)], Strategy.full640(), backend)
            assert backend.backend_id == "stub-fixed"
            dets = run.images[0].detections
            assert len(dets) == 1
            assert dets[0].box_global == Box(10, 10, 30, 30)

    def test_error_response_fails_image(self):
        with SubprocessBackend(STUB + ["error"]) as backend:
            run = run_strategy([simple_image(640, 640)], Strategy.full640(), backend)
            assert run.manifest["images_failed"] == 1
            assert "simulated failure" in run.manifest["failures"][0]["error"]

    def test_dead_backend_reported(self):
        with SubprocessBackend(STUB + ["die"]) as backend:
            run = run_strategy([simple_image(640, 640)], Strategy.full640(), backend)
            assert run.manifest["images_failed"] == 1


class TestCompare:
    def test_row_schema_and_duplicate_strategies(self):
        spec, params = boundary_suite()
        dataset, classes = scenario_to_dataset(spec)
        backend = SimulatedBackend(params)
        result = compare_strategies(
            dataset,
            [Strategy.tile_overlap_nms(), Strategy.tile_overlap_nms()],
            backend,
            range(len(classes)),
            timing=False,
        )
        rows = result["rows"]
        assert len(rows) == 2
        assert list(rows[0]) == ["strategy", "map50", "recall", "precision", "mean_time_ms"]
        assert rows[0] == rows[1]


class TestSweep:
    def test_tau_zero_matches_baseline_and_monotone_boost(self):
        spec, params = adversarial_split_suite()
        dataset, classes = scenario_to_dataset(spec)
        backend = SimulatedBackend(params)
        result = sweep_tatm_params(
            dataset,
            backend,
            range(len(classes)),
            [(0.0, 0.2), (8.0, 0.2), (16.0, 0.2), (32.0, 0.2)],
            timing=False,
        )
        rows = result["rows"]
        baseline, tau0 = rows[0], rows[1]
        assert tau0["map50"] == baseline["map50"]
        assert tau0["recall"] == baseline["recall"]
        assert tau0["score_boosted"] == 0
        boosted = [r["score_boosted"] for r in rows[1:]]
        assert boosted == sorted(boosted)
