"""Scale-aware tiled inference, topology-aware tile merging, and
detection evaluation for high-resolution images."""

from .geometry import (
    Box,
    EdgeDistances,
    GeometryError,
    TileDims,
    apparent_area,
    boundary_distance,
    clip_box,
    iou,
    remap_to_global,
    rescale_box,
)
from .merging import (
    Detection,
    MergeParams,
    adjacent_agreement,
    adjust_score,
    class_aware_nms,
    mark_boundary_sensitivity,
    plain_merge,
    ta_tm_merge,
)
from .tiling import (
    AdjacencyGraph,
    TileGrid,
    TileSpec,
    build_adjacency,
    nearest_grid_boundary_distance,
    plan_grid,
)
from .slicer import AnnotatedImage, Annotation, TileRecord, slice_dataset, slice_image
from .evaluation import EvalReport, build_ground_truths, evaluate, map50
from .pipeline import (
    PrecomputedBackend,
    SimulatedBackend,
    Strategy,
    StrategyKind,
    SubprocessBackend,
    run_strategy,
)

__version__ = "0.1.0"

__all__ = [
    "AdjacencyGraph",
    "AnnotatedImage",
    "Annotation",
    "Box",
    "Detection",
    "EdgeDistances",
    "EvalReport",
    "GeometryError",
    "MergeParams",
    "PrecomputedBackend",
    "SimulatedBackend",
    "Strategy",
    "StrategyKind",
    "SubprocessBackend",
    "TileDims",
    "TileGrid",
    "TileRecord",
    "TileSpec",
    "adjacent_agreement",
    "adjust_score",
    "apparent_area",
    "boundary_distance",
    "build_adjacency",
    "build_ground_truths",
    "class_aware_nms",
    "clip_box",
    "evaluate",
    "iou",
    "map50",
    "mark_boundary_sensitivity",
    "nearest_grid_boundary_distance",
    "plain_merge",
    "plan_grid",
    "remap_to_global",
    "rescale_box",
    "run_strategy",
    "slice_dataset",
    "slice_image",
    "ta_tm_merge",
    "__version__",
]
