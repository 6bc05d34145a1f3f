"""Coarse-to-fine shape completion and descriptor-based denoising.

A level builds a descriptor at each query point, asks the backend for the
completed version, lifts newly valid (or depth-shifted) cells back to 3D,
and filters the pooled candidates for inter-query consensus and even
density before appending them to the cloud. Each level halves the
descriptor extent and seeds its queries from the previous level's
surviving points, so coarse levels sketch the missing region and finer
levels densify it. Input points are never moved or removed.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .backends import BackendError, apply_backend
from .descriptor import KaplanConfig, KaplanDescriptor, PlaneFrame, build_kaplan
from .geometry import PointCloud, _as_point

__all__ = [
    "PredictionRecord",
    "LevelConfig",
    "PipelineConfig",
    "lift_cell",
    "predict_points",
    "filter_predictions",
    "filter_prediction_records",
    "select_query_points",
    "run_level",
    "complete",
    "denoise",
]


@dataclass(frozen=True)
class PredictionRecord:
    """A candidate 3D point with the provenance needed for filtering."""

    point: np.ndarray
    source_query: int
    source_plane: int
    predicted_depth: float
    cell: tuple[int, int]

    def __post_init__(self):
        object.__setattr__(self, "point", _as_point(self.point))


@dataclass(frozen=True)
class LevelConfig:
    """One pyramid level.

    depth_change_threshold, filter_voxel_size and gauss_sigma may be None,
    in which case they resolve against the level's cell size (2 cells, one
    cell, side/4 respectively) once the side length is known.
    """

    level_id: int
    num_query_points: int
    kaplan: KaplanConfig
    depth_change_threshold: float | None = None
    filter_voxel_size: float | None = None
    min_support: int = 2
    gauss_sigma: float | None = None

    def __post_init__(self):
        if self.num_query_points < 1:
            raise ValueError("num_query_points must be >= 1")
        if self.min_support < 1:
            raise ValueError("min_support must be >= 1")
        for name in ("depth_change_threshold", "filter_voxel_size", "gauss_sigma"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ValueError(f"{name} must be positive")

    def resolved(self) -> "LevelConfig":
        """Fill the derived defaults; requires the side length to be set."""
        cell = self.kaplan.cell_size
        side = self.kaplan.side_length
        return replace(
            self,
            depth_change_threshold=self.depth_change_threshold or 2.0 * cell,
            filter_voxel_size=self.filter_voxel_size or cell,
            gauss_sigma=self.gauss_sigma or side / 4.0,
        )


def _default_levels() -> tuple[LevelConfig, ...]:
    counts = (10, 20, 30)
    return tuple(
        LevelConfig(level_id=i, num_query_points=counts[i], kaplan=KaplanConfig())
        for i in range(3)
    )


@dataclass(frozen=True)
class PipelineConfig:
    """Level stack plus the shared valid-flag threshold and seed."""

    levels: tuple[LevelConfig, ...] = ()
    valid_threshold: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        sides = [
            lvl.kaplan.side_length
            for lvl in self.levels
            if lvl.kaplan.side_length is not None
        ]
        if len(sides) == len(self.levels) and any(
            b >= a for a, b in zip(sides, sides[1:])
        ):
            raise ValueError("level side lengths must be strictly decreasing")

    @staticmethod
    def default() -> "PipelineConfig":
        return PipelineConfig(levels=_default_levels())

    @staticmethod
    def from_dict(data: dict) -> "PipelineConfig":
        levels = []
        for i, entry in enumerate(data.get("levels", [])):
            kaplan = KaplanConfig(**entry.get("kaplan", {}))
            fields = {k: v for k, v in entry.items() if k != "kaplan"}
            fields.setdefault("level_id", i)
            levels.append(LevelConfig(kaplan=kaplan, **fields))
        if not levels:
            levels = list(_default_levels())
        return PipelineConfig(
            levels=tuple(levels),
            valid_threshold=data.get("valid_threshold", 0.5),
            rng_seed=data.get("seed", data.get("rng_seed", 0)),
        )

    def to_dict(self) -> dict:
        return {
            "valid_threshold": self.valid_threshold,
            "seed": self.rng_seed,
            "levels": [
                {
                    "level_id": lvl.level_id,
                    "num_query_points": lvl.num_query_points,
                    "depth_change_threshold": lvl.depth_change_threshold,
                    "filter_voxel_size": lvl.filter_voxel_size,
                    "min_support": lvl.min_support,
                    "gauss_sigma": lvl.gauss_sigma,
                    "kaplan": {
                        "num_planes": lvl.kaplan.num_planes,
                        "resolution": lvl.kaplan.resolution,
                        "side_length": lvl.kaplan.side_length,
                        "orientation_mode": lvl.kaplan.orientation_mode,
                        "depth_agg_threshold": lvl.kaplan.depth_agg_threshold,
                        "valid_center_radius": lvl.kaplan.valid_center_radius,
                        "rng_seed": lvl.kaplan.rng_seed,
                    },
                }
                for lvl in self.levels
            ],
        }


def lift_cell(plane: PlaneFrame, i: int, j: int, depth: float) -> np.ndarray:
    """3D point at the center of cell (i, j) lifted to the given depth."""
    r = plane.resolution
    if not (0 <= i < r and 0 <= j < r):
        raise ValueError(f"cell ({i}, {j}) outside [0, {r}) grid")
    u, v = plane.cell_center(i, j)
    return plane.lift(u, v, depth)


def predict_points(
    input_desc: KaplanDescriptor,
    output_desc: KaplanDescriptor,
    cfg: LevelConfig,
    valid_threshold: float = 0.5,
) -> list[PredictionRecord]:
    """Lift cells worth instantiating as new 3D points.

    A cell qualifies when (a) it was invalid in the input and the output
    marks it valid, or (b) it is valid on both sides but the predicted
    depth moved by more than the depth-change threshold. Records are
    emitted plane-major in row-major cell order.
    """
    if not input_desc.same_layout(output_desc):
        raise ValueError("descriptors must share plane frames")
    threshold = cfg.depth_change_threshold
    if threshold is None:
        threshold = 2.0 * input_desc.planes[0].cell_size

    records = []
    for ki, plane in enumerate(input_desc.planes):
        in_valid = input_desc.valid[ki] >= 0.5
        out_valid = output_desc.valid[ki] >= valid_threshold
        flipped = ~in_valid & out_valid
        moved = (
            in_valid
            & out_valid
            & (np.abs(output_desc.depth[ki] - input_desc.depth[ki]) > threshold)
        )
        for i, j in np.argwhere(flipped | moved):
            depth = float(output_desc.depth[ki][i, j])
            records.append(
                PredictionRecord(
                    point=lift_cell(plane, int(i), int(j), depth),
                    source_query=input_desc.query_index,
                    source_plane=ki,
                    predicted_depth=depth,
                    cell=(int(i), int(j)),
                )
            )
    return records


def filter_prediction_records(
    records: list[PredictionRecord],
    voxel_size: float,
    min_support: int = 2,
    sigma: float = 1.0,
) -> list[PredictionRecord]:
    """Consensus-and-density filter over pooled predictions.

    Records are binned into voxels of the given size. A voxel survives
    only when it holds predictions from at least min_support distinct
    query points. Each surviving voxel keeps the single record closest to
    the Gaussian-weighted centroid of its predictions, weights
    exp(-depth^2 / (2 sigma^2)) with the record's |predicted depth|; ties
    prefer lower |depth|, then lower source query, then pooling order.
    Voxels are visited in lexicographic index order.
    """
    if not voxel_size > 0:
        raise ValueError("voxel_size must be positive")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if not records:
        return []

    voxels: dict[tuple[int, int, int], list[tuple[int, PredictionRecord]]] = {}
    for seq, rec in enumerate(records):
        key = tuple(np.floor(rec.point / voxel_size).astype(np.int64))
        voxels.setdefault(key, []).append((seq, rec))

    chosen = []
    for key in sorted(voxels):
        bucket = voxels[key]
        if len({rec.source_query for _, rec in bucket}) < min_support:
            continue
        pts = np.array([rec.point for _, rec in bucket])
        depths = np.array([abs(rec.predicted_depth) for _, rec in bucket])
        weights = np.exp(-(depths**2) / (2.0 * sigma**2))
        total = weights.sum()
        centroid = (weights[:, None] * pts).sum(axis=0) / total if total > 0 else pts.mean(axis=0)
        dist = np.linalg.norm(pts - centroid, axis=1)
        best = min(
            range(len(bucket)),
            key=lambda t: (dist[t], depths[t], bucket[t][1].source_query, bucket[t][0]),
        )
        chosen.append(bucket[best][1])
    return chosen


def filter_predictions(
    records: list[PredictionRecord],
    voxel_size: float,
    min_support: int = 2,
    sigma: float = 1.0,
) -> np.ndarray:
    """filter_prediction_records, returning just the (M, 3) points."""
    chosen = filter_prediction_records(records, voxel_size, min_support, sigma)
    if not chosen:
        return np.empty((0, 3))
    return np.array([rec.point for rec in chosen])


def _fps_indices(points: np.ndarray, n: int, seed: int) -> np.ndarray:
    """Farthest-point sampling order; the first pick is seeded, distance
    ties resolve to the lowest index."""
    count = points.shape[0]
    n = min(n, count)
    rng = np.random.default_rng(seed)
    first = int(rng.integers(count))
    selected = [first]
    dist = np.linalg.norm(points - points[first], axis=1)
    for _ in range(n - 1):
        nxt = int(np.argmax(dist))
        selected.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return np.asarray(selected, dtype=np.intp)


def select_query_points(cloud: PointCloud, n: int, seed: int = 0) -> np.ndarray:
    """n query points spread over the cloud by farthest-point sampling.

    Returns all points (in sampling order) when n exceeds the cloud size.
    Deterministic for a fixed seed.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(cloud) == 0:
        raise ValueError("empty input")
    idx = _fps_indices(cloud.points, n, seed)
    return cloud.points[idx].copy()


def _level_seed(seed: int, level_id: int) -> int:
    return int(np.random.SeedSequence((seed, level_id)).generate_state(1)[0])


def _process_query(cloud, backend, kaplan_cfg, query, q_index):
    try:
        k0 = build_kaplan(cloud, query, kaplan_cfg, query_index=q_index)
        completed = apply_backend(backend, k0)
    except Exception as exc:
        raise BackendError(f"backend failed for query {q_index}: {exc}") from exc
    return k0, completed


def run_level(
    cloud: PointCloud,
    backend,
    cfg: LevelConfig,
    queries: np.ndarray,
    valid_threshold: float = 0.5,
    threads: int | None = None,
) -> tuple[PointCloud, np.ndarray]:
    """Run one completion level and append the surviving new points.

    Normals for new points come from the completed descriptor's normal
    channels (renormalized; zero normals fall back to the plane normal).
    Results are independent of the thread count: per-query outputs are
    pooled in query order and filtered sequentially.
    """
    queries = np.asarray(queries, dtype=np.float64)
    if queries.size == 0:
        raise ValueError("queries must be non-empty")
    queries = queries.reshape(-1, 3)
    cfg = cfg.resolved()
    max_workers = threads or 1
    if getattr(backend, "max_concurrency", None) == 1:
        max_workers = 1

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(
                pool.map(
                    lambda qi: _process_query(cloud, backend, cfg.kaplan, queries[qi], qi),
                    range(len(queries)),
                )
            )
    else:
        results = [
            _process_query(cloud, backend, cfg.kaplan, queries[qi], qi)
            for qi in range(len(queries))
        ]

    records: list[PredictionRecord] = []
    for k0, completed in results:
        records.extend(predict_points(k0, completed, cfg, valid_threshold))

    chosen = filter_prediction_records(
        records, cfg.filter_voxel_size, cfg.min_support, cfg.gauss_sigma
    )
    if not chosen:
        return cloud, np.empty((0, 3))

    new_points = np.array([rec.point for rec in chosen])
    if cloud.has_normals:
        outputs = {k0.query_index: completed for k0, completed in results}
        new_normals = np.empty((len(chosen), 3))
        for t, rec in enumerate(chosen):
            desc = outputs[rec.source_query]
            n = desc.normal[rec.source_plane][rec.cell]
            length = np.linalg.norm(n)
            if length < 1e-12:
                n = desc.planes[rec.source_plane].w_axis
                length = 1.0
            new_normals[t] = n / length
        augmented = cloud.with_appended(new_points, new_normals)
    else:
        augmented = cloud.with_appended(new_points)
    return augmented, new_points


def _resolve_sides(cloud: PointCloud, cfg: PipelineConfig) -> list[LevelConfig]:
    """Auto side lengths: full box extent at the first level, halved after."""
    levels = []
    previous = None
    extent = cloud.bounding_box().largest_edge if len(cloud) else 1.0
    for lvl in cfg.levels:
        side = lvl.kaplan.side_length
        if side is None:
            side = extent if previous is None else previous / 2.0
        levels.append(replace(lvl, kaplan=lvl.kaplan.with_side(side)))
        previous = side
    sides = [lvl.kaplan.side_length for lvl in levels]
    if any(b >= a for a, b in zip(sides, sides[1:])):
        raise ValueError("level side lengths must be strictly decreasing")
    return levels


def complete(
    cloud: PointCloud,
    backend,
    cfg: PipelineConfig,
    threads: int | None = None,
) -> PointCloud:
    """Run the full coarse-to-fine pipeline.

    The first level queries the input cloud by farthest-point sampling;
    each following level draws its queries from the previous level's
    filtered new points, falling back to the whole current cloud when a
    level produced nothing. Input points pass through verbatim.
    """
    if len(cloud) == 0:
        raise ValueError("empty input")
    if not cfg.levels:
        return cloud

    levels = _resolve_sides(cloud, cfg)
    current = cloud
    previous_new: np.ndarray | None = None
    for li, lvl in enumerate(levels):
        seed = _level_seed(cfg.rng_seed, lvl.level_id)
        if previous_new is None or previous_new.shape[0] == 0:
            queries = select_query_points(current, lvl.num_query_points, seed)
        else:
            idx = _fps_indices(previous_new, lvl.num_query_points, seed)
            queries = previous_new[idx]
        current, previous_new = run_level(
            current, backend, lvl, queries, cfg.valid_threshold, threads
        )
    return current


def denoise(
    cloud: PointCloud,
    backend,
    cfg: KaplanConfig,
    valid_threshold: float = 0.5,
    threads: int | None = None,
) -> PointCloud:
    """Move each point to the lifted central cell of its own descriptor.

    For every point a descriptor is built with the point as query, passed
    through the backend, and the point is relocated to the mean of the
    lifted central-cell depths over the planes whose central cell the
    output marks valid. Points with no valid central cell stay in place;
    the count never changes.
    """
    if len(cloud) == 0:
        raise ValueError("empty input")
    if cfg.side_length is None:
        raise ValueError("side_length is not set")
    center = cfg.resolution // 2
    max_workers = threads or 1
    if getattr(backend, "max_concurrency", None) == 1:
        max_workers = 1

    def relocate(index: int) -> np.ndarray:
        point = cloud.points[index]
        k0 = build_kaplan(cloud, point, cfg, query_index=index)
        try:
            completed = apply_backend(backend, k0)
        except Exception as exc:
            raise BackendError(f"backend failed for query {index}: {exc}") from exc
        offsets = [
            lift_cell(plane, center, center, float(completed.depth[ki][center, center]))
            - point
            for ki, plane in enumerate(completed.planes)
            if completed.valid[ki][center, center] >= valid_threshold
        ]
        if not offsets:
            return point.copy()
        # averaging offsets (not absolute positions) keeps an unmoved
        # point bit-identical
        return point + np.mean(offsets, axis=0)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            moved = list(pool.map(relocate, range(len(cloud))))
    else:
        moved = [relocate(i) for i in range(len(cloud))]
    return PointCloud(np.array(moved), cloud.normals)
