"""Multi-plane point descriptors and coarse-to-fine shape completion."""

from .backends import (
    BackendError,
    DescriptorMismatchError,
    ExternalBackend,
    ExternalProcessError,
    ExternalTimeoutError,
    GtOracleBackend,
    IdentityBackend,
    apply_backend,
)
from .completion import (
    LevelConfig,
    PipelineConfig,
    PredictionRecord,
    complete,
    denoise,
    filter_prediction_records,
    filter_predictions,
    lift_cell,
    predict_points,
    run_level,
    select_query_points,
)
from .datagen import HoleSpec, LevelData, build_level_hierarchy, synthesize_hole
from .descriptor import (
    KaplanConfig,
    KaplanDescriptor,
    LossBreakdown,
    LossWeights,
    PlaneFrame,
    aggregate_cell_depths,
    attribute_valid_flags,
    build_kaplan,
    build_on_planes,
    collect_box_neighbors,
    compute_losses,
    make_planes,
)
from .geometry import (
    BoundingBox,
    NormalizeTransform,
    PointCloud,
    estimate_normals,
    knn,
    normalize_cloud,
)
from .io import load_cloud, read_ply, read_xyz, save_cloud, write_ply, write_xyz
from .kpln import KplnFormatError, from_bytes, read_kpln, to_bytes, write_kpln
from .metrics import EvalReport, chamfer, f1_score, hole_region_report

__version__ = "0.1.0"
