"""Command-line entry point.

Subcommands cover every pipeline stage: plan, slice, run, merge, eval,
compare, sweep, synth. All report writers are deterministic; rerunning a
command with identical inputs overwrites outputs byte-identically (pass
--no-timing to zero the only volatile fields, wall-clock timings).
"""

from __future__ import annotations

import argparse
import os
import sys
from collections import defaultdict
from pathlib import Path

from . import config as config_mod
from . import formats, synth
from .evaluation import build_ground_truths, evaluate, resolution_collapse_report
from .merging import MergeParams, canonical_sort, plain_merge, ta_tm_merge
from .pipeline import (
    ALL_STRATEGY_NAMES,
    PrecomputedBackend,
    SimulatedBackend,
    Strategy,
    SubprocessBackend,
    compare_strategies,
    run_strategy,
    sweep_tatm_params,
)
from .slicer import AnnotatedImage, emit_training_labels, slice_dataset
from .tiling import plan_grid


class CliError(Exception):
    pass


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker threads")
    parser.add_argument("--tile-size", type=int, default=None)
    parser.add_argument("--stride", type=int, default=None)
    parser.add_argument("--conf", type=float, default=None)
    parser.add_argument("--nms-iou", type=float, default=None)
    parser.add_argument("--tau", type=float, default=None)
    parser.add_argument("--lambda", dest="lam", type=float, default=None)
    parser.add_argument("--mu", type=float, default=None)
    parser.add_argument("--input-full", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument(
        "--no-timing", action="store_true", help="zero timing fields for reproducible outputs"
    )
    parser.add_argument(
        "--filter-after-adjust",
        action="store_true",
        help="apply the confidence threshold to adjusted scores instead of raw scores",
    )


def _resolve(args: argparse.Namespace) -> dict[str, str]:
    file_config = config_mod.load_config(args.config) if args.config else None
    overrides = {
        "tile_size": None if args.tile_size is None else str(args.tile_size),
        "stride": None if args.stride is None else str(args.stride),
        "conf": None if args.conf is None else str(args.conf),
        "nms_iou": None if args.nms_iou is None else str(args.nms_iou),
        "tau": None if args.tau is None else str(args.tau),
        "lambda": None if args.lam is None else str(args.lam),
        "mu": None if args.mu is None else str(args.mu),
        "input_full": None if args.input_full is None else str(args.input_full),
        "seed": None if args.seed is None else str(args.seed),
        "backend.kind": getattr(args, "backend_kind", None),
        "backend.cmd": getattr(args, "backend_cmd", None),
        "backend.dir": getattr(args, "backend_dir", None),
    }
    return config_mod.effective_config(file_config, overrides)


def _merge_params(cfg: dict[str, str], args: argparse.Namespace | None = None) -> MergeParams:
    return MergeParams(
        conf_threshold=float(cfg["conf"]),
        nms_iou=float(cfg["nms_iou"]),
        tau=float(cfg["tau"]),
        lam=float(cfg["lambda"]),
        mu=float(cfg["mu"]),
        filter_after_adjust=bool(args and getattr(args, "filter_after_adjust", False)),
    )


def _load_dataset(args: argparse.Namespace):
    if getattr(args, "coco", None):
        return formats.read_coco(args.coco)
    if getattr(args, "yolo_images", None):
        if not (args.yolo_labels and args.yolo_classes):
            raise CliError("YOLO input needs --yolo-images, --yolo-labels and --yolo-classes")
        from PIL import Image

        metas = []
        for path in sorted(Path(args.yolo_images).iterdir()):
            if path.suffix.lower() not in (".png", ".jpg", ".jpeg", ".bmp", ".ppm"):
                continue
            with Image.open(path) as im:
                metas.append(
                    AnnotatedImage(path.stem, str(path), im.width, im.height)
                )
        names = formats.read_class_file(args.yolo_classes)
        class_map = formats.ClassMap(names=tuple(names), source_ids=tuple(range(len(names))))
        return formats.read_yolo(args.yolo_labels, metas), class_map
    raise CliError("--coco <file> (or a --yolo-* triple) is required")


def _make_backend(args: argparse.Namespace, cfg: dict[str, str]):
    kind = cfg.get("backend.kind") or "sim"
    if kind == "sim":
        if getattr(args, "sim_params", None):
            params = synth.SimDetectorParams.from_dict(formats.read_json(args.sim_params))
        elif getattr(args, "sim_suite", None):
            _, params = synth.STANDARD_SUITES[args.sim_suite]()
        else:
            params = synth.SimDetectorParams(seed=int(cfg["seed"]))
        return SimulatedBackend(params)
    if kind == "precomputed":
        directory = cfg.get("backend.dir")
        if not directory:
            raise CliError("backend.dir (or --backend-dir) is required for the precomputed backend")
        return PrecomputedBackend(directory)
    if kind == "subprocess":
        cmd = cfg.get("backend.cmd")
        if not cmd:
            raise CliError("backend.cmd (or --backend-cmd) is required for the subprocess backend")
        return SubprocessBackend(cmd)
    raise CliError(f"unknown backend kind: {kind!r}")


def _strategies_from_arg(arg: str, cfg: dict[str, str], merge: MergeParams) -> list[Strategy]:
    names = ALL_STRATEGY_NAMES if arg == "all" else [s.strip() for s in arg.split(",") if s.strip()]
    out = []
    for name in names:
        if name not in ALL_STRATEGY_NAMES:
            raise CliError(f"unknown strategy: {name!r} (choose from {', '.join(ALL_STRATEGY_NAMES)})")
        out.append(
            Strategy.from_name(
                name,
                tile_size=int(cfg["tile_size"]),
                stride=int(cfg["stride"]),
                input_full=int(cfg["input_full"]),
                merge=merge,
            )
        )
    return out


def _write_detections_file(dets_by_image, strategy_name, grids, path) -> None:
    records = []
    for image_id in sorted(dets_by_image):
        tiles = grids.get(image_id)
        tile_map = tiles.tile_map() if tiles is not None else None
        for det in canonical_sort(dets_by_image[image_id]):
            records.append(formats.detection_to_record(det, strategy_name, tile_map))
    formats.write_detections(records, path)


# ---------------------------------------------------------------------------
# subcommands

def cmd_plan(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    tile_size, stride = int(cfg["tile_size"]), int(cfg["stride"])
    out = Path(args.out)
    if args.coco:
        dataset, _ = formats.read_coco(args.coco)
        grids = [
            formats.grid_to_manifest(img.image_id, plan_grid(img.width, img.height, tile_size, stride))
            for img in dataset
        ]
        formats.write_json({"tile_size": tile_size, "stride": stride, "grids": grids}, out)
    else:
        if not (args.width and args.height):
            raise CliError("either --coco or both --width and --height are required")
        grid = plan_grid(args.width, args.height, tile_size, stride)
        formats.write_json(formats.grid_to_manifest(args.image_id, grid), out)
    print(f"wrote {out}")
    return 0


def cmd_slice(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    dataset, class_map = _load_dataset(args)
    records, summary = slice_dataset(
        dataset,
        tile_size=int(cfg["tile_size"]),
        stride=int(cfg["stride"]),
        min_visibility=args.min_visibility,
    )
    out = Path(args.out)
    image_paths = {}
    if args.crops:
        if args.coco:
            root = Path(args.images_dir or Path(args.coco).parent)
            image_paths = {img.image_id: str(root / img.path) for img in dataset if img.path}
        else:
            image_paths = {img.image_id: img.path for img in dataset if img.path}
    emit_training_labels(
        records,
        out,
        fmt=args.format,
        class_names=list(class_map.names),
        tile_size=int(cfg["tile_size"]),
        stride=int(cfg["stride"]),
        write_crops=args.crops,
        image_paths=image_paths or None,
    )
    formats.write_json(summary.to_dict(), out / "summary.json")
    print(
        f"wrote {summary.n_tiles} tiles ({summary.n_positive} positive, "
        f"{summary.positive_ratio:.1%}) to {out}"
    )
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    dataset, class_map = _load_dataset(args)
    merge = _merge_params(cfg, args)
    strategy = _strategies_from_arg(args.strategy, cfg, merge)[0]
    backend = _make_backend(args, cfg)
    run = run_strategy(
        dataset,
        strategy,
        backend,
        jobs=args.jobs,
        dataset_id=Path(args.coco).stem,
        timing=not args.no_timing,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grids = {r.image_id: r.grid for r in run.images if r.grid is not None}
    _write_detections_file(run.detections_by_image(), strategy.kind.value, grids, out / "detections.jsonl")
    if args.keep_raw:
        raw_by_image = {r.image_id: r.raw for r in run.images if not r.failed}
        _write_detections_file(raw_by_image, strategy.kind.value, grids, out / "raw_detections.jsonl")
    manifest = dict(run.manifest)
    manifest["effective_config"] = cfg
    formats.write_json(manifest, out / "run_manifest.json")
    print(f"{strategy.kind.value}: {manifest['images_ok']} images ok, "
          f"{manifest['images_failed']} failed -> {out}")
    return 0


def cmd_merge(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    merge = _merge_params(cfg, args)
    by_image: dict[str, list] = defaultdict(list)
    tiles_by_image: dict[str, dict] = defaultdict(dict)
    for record in formats.read_detections(args.input):
        det, tile_spec = formats.record_to_detection(record)
        by_image[record.image_id].append(det)
        if tile_spec is not None:
            tiles_by_image[record.image_id][tile_spec.index] = tile_spec
    merged_by_image = {}
    boosted_total = 0
    for image_id in sorted(by_image):
        if args.mode == "tatm":
            merged, audit = ta_tm_merge(by_image[image_id], tiles_by_image[image_id], merge)
            boosted_total += audit.n_boosted
        else:
            merged = plain_merge(by_image[image_id], merge)
        merged_by_image[image_id] = merged
    records = []
    for image_id in sorted(merged_by_image):
        tile_map = tiles_by_image.get(image_id) or None
        for det in canonical_sort(merged_by_image[image_id]):
            records.append(formats.detection_to_record(det, args.mode, tile_map))
    formats.write_detections(records, args.out)
    print(f"merged {sum(len(v) for v in by_image.values())} -> "
          f"{sum(len(v) for v in merged_by_image.values())} detections "
          f"({boosted_total} score-boosted) -> {args.out}")
    return 0


def _eval_report_tables(report, out: Path, title: str) -> None:
    formats.write_json(report.to_dict(), out / "report.json")
    headers = ["metric", "value"]
    rows = [
        ["map50", report.map50],
        ["precision", report.precision],
        ["recall", report.recall],
    ]
    for b in report.area_bins:
        rows.append([f"recall_area {b.label}", b.recall])
    for b in report.boundary_bins:
        rows.append([f"recall_boundary {b.label}", b.recall])
    rows.append(["mean_time_ms", report.mean_time_ms])
    formats.write_table_csv(headers, rows, out / "report.csv")
    formats.write_table_markdown(title, headers, rows, out / "report.md")


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    dataset, class_map = _load_dataset(args)
    gts = build_ground_truths(
        dataset, reference_tile_size=int(cfg["tile_size"]), input_size=args.input_size
    )
    preds_by_image: dict[str, list] = defaultdict(list)
    for record in formats.read_detections(args.detections):
        det, _ = formats.record_to_detection(record)
        preds_by_image[record.image_id].append(det)
    report = evaluate(
        preds_by_image, gts, range(len(class_map.names)), conf=float(cfg["conf"])
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _eval_report_tables(report, out, "Evaluation report")
    if args.collapse_report:
        formats.write_json(
            resolution_collapse_report(dataset), out / "resolution_collapse.json"
        )
    print(f"map50={report.map50:.6f} precision={report.precision:.6f} "
          f"recall={report.recall:.6f} -> {out}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    dataset, class_map = _load_dataset(args)
    merge = _merge_params(cfg, args)
    strategies = _strategies_from_arg(args.strategies, cfg, merge)
    backend = _make_backend(args, cfg)
    result = compare_strategies(
        dataset,
        strategies,
        backend,
        range(len(class_map.names)),
        reference_tile_size=int(cfg["tile_size"]),
        input_size=args.input_size,
        jobs=args.jobs,
        timing=not args.no_timing,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    headers = ["strategy", "map50", "recall", "precision", "mean_time_ms"]
    rows = [[r[h] for h in headers] for r in result["rows"]]
    formats.write_json({"rows": result["rows"]}, out / "compare.json")
    formats.write_table_csv(headers, rows, out / "compare.csv")
    formats.write_table_markdown("Strategy comparison", headers, rows, out / "compare.md")
    _binned_comparison_tables(result["runs"], out)
    for name, (run, report) in result["runs"].items():
        strategy_dir = out / name
        strategy_dir.mkdir(exist_ok=True)
        grids = {r.image_id: r.grid for r in run.images if r.grid is not None}
        _write_detections_file(run.detections_by_image(), name, grids, strategy_dir / "detections.jsonl")
        _eval_report_tables(report, strategy_dir, f"Evaluation report: {name}")
    print(f"compared {len(rows)} strategies -> {out}")
    return 0


def _binned_comparison_tables(runs: dict, out: Path) -> None:
    """Recall-per-bin tables with one column per strategy."""
    names = list(runs)
    if not names:
        return
    for attr, stem, title in (
        ("area_bins", "area_recall", "Recall by apparent-area bin"),
        ("boundary_bins", "boundary_recall", "Recall by boundary-distance bin"),
    ):
        reference = getattr(runs[names[0]][1], attr)
        headers = ["bin", "n_gt"] + names
        rows = []
        for i, ref_bin in enumerate(reference):
            row = [ref_bin.label, ref_bin.n_gt]
            row += [getattr(runs[name][1], attr)[i].recall for name in names]
            rows.append(row)
        formats.write_table_csv(headers, rows, out / f"{stem}.csv")
        formats.write_table_markdown(title, headers, rows, out / f"{stem}.md")


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    dataset, class_map = _load_dataset(args)
    merge = _merge_params(cfg, args)
    backend = _make_backend(args, cfg)
    taus = [float(v) for v in args.taus.split(",") if v.strip()]
    lams = [float(v) for v in args.lambdas.split(",") if v.strip()]
    points = [(tau, lam) for tau in taus for lam in lams]
    result = sweep_tatm_params(
        dataset,
        backend,
        range(len(class_map.names)),
        points,
        tile_size=int(cfg["tile_size"]),
        stride=int(cfg["stride"]),
        base_merge=merge,
        input_size=args.input_size,
        jobs=args.jobs,
        timing=not args.no_timing,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    headers = [
        "tau", "lambda", "score_boosted", "score_boosted_per_image_mean",
        "map50", "recall", "boundary_recall_0_16",
    ]
    rows = [[r[h] for h in headers] for r in result["rows"]]
    formats.write_json({"rows": result["rows"]}, out / "sweep.json")
    formats.write_table_csv(headers, rows, out / "sweep.csv")
    formats.write_table_markdown("TA-TM parameter sweep", headers, rows, out / "sweep.md")
    print(f"swept {len(points)} (tau, lambda) points -> {out}")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    if args.suite:
        spec, params = synth.STANDARD_SUITES[args.suite]()
    elif args.spec:
        spec = formats.read_json(args.spec)
        params = synth.SimDetectorParams.from_dict(spec.get("detector", {}))
    else:
        raise CliError("either --suite or --spec is required")
    dataset, class_names = synth.scenario_to_dataset(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.render:
        for img in dataset:
            name = Path(img.path or img.image_id).stem + f".{args.render}"
            synth.render_board(img, str(out / name))
            img.path = name
    formats.write_coco(dataset, class_names, out / "coco.json")
    formats.write_json(spec, out / "scenario.json")
    formats.write_json(params.to_dict(), out / "sim_params.json")
    n_defects = sum(len(img.annotations) for img in dataset)
    print(f"wrote {len(dataset)} images, {n_defects} defects -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tiledet",
        description="Tiled inference planning, merging, and evaluation for high-resolution detection",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="plan a tile grid and write its manifest")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--image-id", default="image")
    p.add_argument("--coco", help="plan one grid per dataset image")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("slice", help="slice an annotated dataset into training tiles")
    p.add_argument("--coco")
    p.add_argument("--yolo-images", help="YOLO layout: images directory")
    p.add_argument("--yolo-labels", help="YOLO layout: labels directory")
    p.add_argument("--yolo-classes", help="YOLO layout: class-name file")
    p.add_argument("--out", required=True)
    p.add_argument("--min-visibility", type=float, default=0.4)
    p.add_argument("--format", choices=["yolo-txt", "coco-json"], default="yolo-txt")
    p.add_argument("--crops", action="store_true", help="also write tile pixel crops")
    p.add_argument("--images-dir", help="root of source images (default: beside the COCO file)")
    _add_common(p)
    p.set_defaults(fn=cmd_slice)

    p = sub.add_parser("run", help="run one inference strategy over a dataset")
    p.add_argument("--coco", required=True)
    p.add_argument("--strategy", required=True, choices=ALL_STRATEGY_NAMES)
    p.add_argument("--backend-kind", choices=["sim", "precomputed", "subprocess"])
    p.add_argument("--backend-dir")
    p.add_argument("--backend-cmd")
    p.add_argument("--sim-params", help="JSON file of simulated-detector params")
    p.add_argument("--sim-suite", choices=sorted(synth.STANDARD_SUITES))
    p.add_argument("--keep-raw", action="store_true", help="also write pre-merge detections")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("merge", help="merge raw per-tile detections from a file")
    p.add_argument("--input", required=True)
    p.add_argument("--mode", choices=["nms", "tatm"], required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(fn=cmd_merge)

    p = sub.add_parser("eval", help="evaluate a detections file against ground truth")
    p.add_argument("--detections", required=True)
    p.add_argument("--coco", required=True)
    p.add_argument("--input-size", type=int, default=640)
    p.add_argument("--collapse-report", action="store_true")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("compare", help="run several strategies and tabulate their metrics")
    p.add_argument("--coco", required=True)
    p.add_argument("--strategies", default="all")
    p.add_argument("--backend-kind", choices=["sim", "precomputed", "subprocess"])
    p.add_argument("--backend-dir")
    p.add_argument("--backend-cmd")
    p.add_argument("--sim-params")
    p.add_argument("--sim-suite", choices=sorted(synth.STANDARD_SUITES))
    p.add_argument("--input-size", type=int, default=640)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("sweep", help="TA-TM (tau, lambda) ablation on the overlap grid")
    p.add_argument("--coco", required=True)
    p.add_argument("--backend-kind", choices=["sim", "precomputed", "subprocess"])
    p.add_argument("--backend-dir")
    p.add_argument("--backend-cmd")
    p.add_argument("--sim-params")
    p.add_argument("--sim-suite", choices=sorted(synth.STANDARD_SUITES))
    p.add_argument("--taus", default="16,32")
    p.add_argument("--lambdas", default="0.2,0.4")
    p.add_argument("--input-size", type=int, default=640)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--suite", choices=sorted(synth.STANDARD_SUITES))
    p.add_argument("--spec", help="scenario spec JSON file")
    p.add_argument("--render", nargs="?", const="png", choices=["png", "ppm"],
                   help="also render board images (default png)")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(fn=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, config_mod.ConfigError, formats.FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, NotImplementedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
