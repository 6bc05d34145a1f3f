"""Synthetic incomplete/complete pair generation.

A hole is cut by picking a center point and removing its nearest
neighbors; coarser pyramid levels are built by independently subsampling
the incomplete and missing sets so every level stays a true subset of the
finest one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud, knn

__all__ = ["HoleSpec", "LevelData", "synthesize_hole", "build_level_hierarchy"]


@dataclass(frozen=True)
class HoleSpec:
    """Fraction of points to remove around a (seeded or explicit) center."""

    fraction: float
    center_index: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.fraction < 1.0:
            raise ValueError("fraction must be in (0, 1)")


@dataclass(frozen=True)
class LevelData:
    """Incomplete/missing/complete triple for one pyramid level."""

    level_id: int
    incomplete: PointCloud
    missing: PointCloud
    complete: PointCloud


def _subcloud(cloud: PointCloud, idx: np.ndarray) -> PointCloud:
    normals = cloud.normals[idx] if cloud.has_normals else None
    return PointCloud(cloud.points[idx], normals)


def synthesize_hole(cloud: PointCloud, spec: HoleSpec) -> tuple[PointCloud, PointCloud]:
    """Split the cloud into (incomplete, missing) around a hole center.

    The missing set is the round(fraction * n) nearest points to the
    center, center included; both outputs preserve the input point order.
    """
    n = len(cloud)
    if n == 0:
        raise ValueError("empty input")
    count = int(round(spec.fraction * n))
    if count < 1 or count >= n:
        raise ValueError(
            f"fraction {spec.fraction} removes {count} of {n} points; "
            "need at least 1 and fewer than all"
        )
    if spec.center_index is not None:
        if not 0 <= spec.center_index < n:
            raise ValueError("center_index out of range")
        center_idx = spec.center_index
    else:
        center_idx = int(np.random.default_rng(spec.seed).integers(n))
    missing_idx = np.sort(knn(cloud, cloud.points[center_idx], count))
    mask = np.zeros(n, dtype=bool)
    mask[missing_idx] = True
    return _subcloud(cloud, np.flatnonzero(~mask)), _subcloud(cloud, missing_idx)


def build_level_hierarchy(
    incomplete: PointCloud,
    missing: PointCloud,
    ratios=(0.25, 0.5, 1.0),
    seed: int = 0,
) -> list[LevelData]:
    """Downsample the finest pair into a coarse-to-fine level stack.

    ratios list one keep-fraction per level, ascending with the last equal
    to 1 (the unchanged input pair). The incomplete and missing sets are
    subsampled independently, uniformly without replacement, preserving
    point order; their union forms each level's complete cloud.
    """
    ratios = list(ratios)
    if not ratios:
        raise ValueError("need at least one ratio")
    if any(not 0.0 < r <= 1.0 for r in ratios):
        raise ValueError("ratios must lie in (0, 1]")
    if any(b <= a for a, b in zip(ratios, ratios[1:])):
        raise ValueError("ratios must be strictly increasing, coarse to fine")
    if ratios[-1] != 1.0:
        raise ValueError("the finest ratio must be 1.0")

    rng = np.random.default_rng(seed)
    levels = []
    for level_id, ratio in enumerate(ratios):
        if ratio == 1.0:
            inc, mis = incomplete, missing
        else:
            inc = _random_subset(incomplete, ratio, rng)
            mis = _random_subset(missing, ratio, rng)
        if len(inc) == 0 or len(mis) == 0:
            raise ValueError(f"ratio {ratio} leaves an empty subset at level {level_id}")
        union_points = np.vstack([inc.points, mis.points])
        if inc.has_normals and mis.has_normals:
            union = PointCloud(union_points, np.vstack([inc.normals, mis.normals]))
        else:
            union = PointCloud(union_points)
        levels.append(LevelData(level_id, inc, mis, union))
    return levels


def _random_subset(cloud: PointCloud, ratio: float, rng: np.random.Generator) -> PointCloud:
    n = len(cloud)
    count = int(round(ratio * n))
    if count < 1:
        return _subcloud(cloud, np.empty(0, dtype=np.intp))
    idx = np.sort(rng.choice(n, size=count, replace=False))
    return _subcloud(cloud, idx)
