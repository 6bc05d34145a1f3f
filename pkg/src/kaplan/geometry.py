"""Point-cloud container, normalization, k-NN queries and normal estimation.

Points are plain (N, 3) float64 arrays wrapped in an immutable PointCloud.
A kd-tree over the points is built lazily and cached, so repeated spatial
queries against the same cloud are cheap.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "PointCloud",
    "BoundingBox",
    "NormalizeTransform",
    "normalize_cloud",
    "knn",
    "estimate_normals",
]

# Relative slack added to kd-tree radii so exact-boundary candidates are
# never lost to floating-point rounding; exact filters are re-applied after.
_RADIUS_SLACK = 1e-12


def _as_points(array) -> np.ndarray:
    pts = np.ascontiguousarray(array, dtype=np.float64)
    if pts.size == 0:
        pts = pts.reshape(0, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) point array, got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError("points contain NaN or infinite coordinates")
    return pts


def _as_point(value) -> np.ndarray:
    p = np.asarray(value, dtype=np.float64).reshape(3)
    if not np.isfinite(p).all():
        raise ValueError("point contains NaN or infinite coordinates")
    return p


class PointCloud:
    """Immutable ordered point set with optional unit normals."""

    __slots__ = ("_points", "_normals", "_tree")

    def __init__(self, points, normals=None):
        self._points = _as_points(points)
        self._points.setflags(write=False)
        if normals is not None:
            normals = np.ascontiguousarray(normals, dtype=np.float64)
            if normals.shape != self._points.shape:
                raise ValueError("normals must match points one-to-one")
            if not np.isfinite(normals).all():
                raise ValueError("normals contain NaN or infinite components")
            lengths = np.linalg.norm(normals, axis=1)
            if lengths.size and np.abs(lengths - 1.0).max() > 1e-6:
                raise ValueError("normals must be unit length within 1e-6")
            normals.setflags(write=False)
        self._normals = normals
        self._tree = None

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def normals(self) -> np.ndarray | None:
        return self._normals

    @property
    def has_normals(self) -> bool:
        return self._normals is not None

    def __len__(self) -> int:
        return self._points.shape[0]

    def __repr__(self) -> str:
        kind = "with normals" if self.has_normals else "no normals"
        return f"PointCloud({len(self)} points, {kind})"

    @property
    def tree(self) -> cKDTree:
        """kd-tree over the points; built once on first use."""
        if self._tree is None:
            if len(self) == 0:
                raise ValueError("empty cloud has no spatial index")
            self._tree = cKDTree(self._points)
        return self._tree

    def bounding_box(self) -> "BoundingBox":
        if len(self) == 0:
            raise ValueError("empty input")
        return BoundingBox(self._points.min(axis=0), self._points.max(axis=0))

    def with_appended(self, points, normals=None) -> "PointCloud":
        """New cloud with extra points appended; originals stay bit-identical."""
        extra = _as_points(points)
        if extra.shape[0] == 0:
            return PointCloud(self._points, self._normals)
        merged = np.vstack([self._points, extra])
        if self.has_normals:
            if normals is None:
                raise ValueError("cloud has normals; appended points need them too")
            merged_normals = np.vstack([self._normals, np.asarray(normals, dtype=np.float64)])
        else:
            merged_normals = None
        return PointCloud(merged, merged_normals)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box given by its min and max corners."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "min", _as_point(self.min))
        object.__setattr__(self, "max", _as_point(self.max))
        if np.any(self.min > self.max):
            raise ValueError("box min must not exceed max")

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    @property
    def largest_edge(self) -> float:
        return float(self.extent.max())

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)


@dataclass(frozen=True)
class NormalizeTransform:
    """Map p -> (p + translation) * scale; invertible for scale > 0."""

    translation: np.ndarray
    scale: float

    def __post_init__(self):
        object.__setattr__(self, "translation", _as_point(self.translation))
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def apply(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) + self.translation) * self.scale

    def invert(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale - self.translation


def normalize_cloud(cloud: PointCloud) -> tuple[PointCloud, NormalizeTransform]:
    """Center the cloud at the origin and scale its largest box edge to 1.

    Degenerate clouds (zero extent on every axis) are translated only,
    keeping scale 1 so the transform stays invertible.
    """
    if len(cloud) == 0:
        raise ValueError("empty input")
    box = cloud.bounding_box()
    extent = box.largest_edge
    scale = 1.0 / extent if extent > 0 else 1.0
    transform = NormalizeTransform(translation=-box.center, scale=scale)
    return PointCloud(transform.apply(cloud.points), cloud.normals), transform


def knn(cloud: PointCloud, query, k: int) -> np.ndarray:
    """Indices of the k nearest points, by ascending Euclidean distance.

    Exact-distance ties are broken by ascending point index, so the result
    is fully deterministic.
    """
    n = len(cloud)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    q = _as_point(query)
    dists, _ = cloud.tree.query(q, k=k)
    worst = float(np.max(dists))
    radius = worst * (1.0 + _RADIUS_SLACK) + 1e-300
    candidates = np.asarray(cloud.tree.query_ball_point(q, radius), dtype=np.intp)
    d = np.linalg.norm(cloud.points[candidates] - q, axis=1)
    order = np.lexsort((candidates, d))
    return candidates[order][:k]


def estimate_normals(
    cloud: PointCloud, k: int, return_degenerate: bool = False
) -> PointCloud | tuple[PointCloud, np.ndarray]:
    """Attach unit normals from the smallest covariance eigenvector of each
    point's k-neighborhood (the point itself included).

    The sign is chosen to point away from the neighborhood centroid.
    Rank-deficient neighborhoods (collinear or coincident points) fall back
    to +z and trigger a warning; pass return_degenerate=True to also get the
    per-point fallback mask.
    """
    if k < 3:
        raise ValueError("normal estimation needs k >= 3")
    if len(cloud) < k:
        raise ValueError(f"cloud has {len(cloud)} points, need at least k={k}")
    pts = cloud.points
    _, idx = cloud.tree.query(pts, k=k)
    neighbors = pts[idx]
    centroid = neighbors.mean(axis=1)
    centered = neighbors - centroid[:, None, :]
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = np.maximum(eigvals, 0.0)
    normals = eigvecs[:, :, 0].copy()
    # rank < 2: middle eigenvalue vanishes relative to the largest
    degenerate = eigvals[:, 1] <= 1e-10 * eigvals[:, 2] + 1e-30
    if degenerate.any():
        normals[degenerate] = (0.0, 0.0, 1.0)
        warnings.warn(
            f"{int(degenerate.sum())} degenerate neighborhoods; normals set to +z",
            stacklevel=2,
        )
    outward = np.einsum("ni,ni->n", normals, pts - centroid)
    normals[outward < 0] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    result = PointCloud(pts, normals)
    if return_degenerate:
        return result, degenerate
    return result
