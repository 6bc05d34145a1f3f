"""Multi-plane point descriptors.

A descriptor at a query point is a stack of K oriented planes, each an
R x R grid of 5 channels: signed depth, a valid flag, and the averaged
point normal (3 components, global frame). Points inside an axis-aligned
box around the query are projected orthogonally onto every plane; per
cell, depths are clustered so that only the surface closest to the plane
survives, and the valid flag records whether the cell's projections
actually support the cell center.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import PointCloud, _as_point, _RADIUS_SLACK, knn

__all__ = [
    "ORIENTATION_MODES",
    "PlaneFrame",
    "KaplanConfig",
    "KaplanDescriptor",
    "LossWeights",
    "LossBreakdown",
    "make_planes",
    "collect_box_neighbors",
    "aggregate_cell_depths",
    "attribute_valid_flags",
    "build_kaplan",
    "build_on_planes",
    "compute_losses",
]

ORIENTATION_MODES = ("canonical", "random_min30", "tangential")

_AXES = np.eye(3)

NUM_CHANNELS = 5


@dataclass(frozen=True)
class PlaneFrame:
    """Oriented square grid centered at a query point.

    u_axis/v_axis span the plane, w_axis is its normal; the triple is
    right-handed orthonormal. The grid has resolution x resolution square
    cells covering side_length x side_length, so an odd resolution puts a
    cell center exactly at the origin.
    """

    origin: np.ndarray
    u_axis: np.ndarray
    v_axis: np.ndarray
    w_axis: np.ndarray
    side_length: float
    resolution: int

    def __post_init__(self):
        object.__setattr__(self, "origin", _as_point(self.origin))
        for name in ("u_axis", "v_axis", "w_axis"):
            axis = _as_point(getattr(self, name))
            if abs(np.linalg.norm(axis) - 1.0) > 1e-6:
                raise ValueError(f"{name} must be unit length")
            object.__setattr__(self, name, axis)
        for a, b in (("u_axis", "v_axis"), ("u_axis", "w_axis"), ("v_axis", "w_axis")):
            if abs(np.dot(getattr(self, a), getattr(self, b))) > 1e-6:
                raise ValueError(f"{a} and {b} must be orthogonal")
        if np.linalg.norm(np.cross(self.u_axis, self.v_axis) - self.w_axis) > 1e-6:
            raise ValueError("axes must form a right-handed frame (w = u x v)")
        if not self.side_length > 0:
            raise ValueError("side_length must be positive")
        if self.resolution < 3 or self.resolution % 2 == 0:
            raise ValueError("resolution must be odd and >= 3")

    @property
    def cell_size(self) -> float:
        return self.side_length / self.resolution

    def cell_center(self, i: int, j: int) -> tuple[float, float]:
        """In-plane (u, v) coordinates of the center of cell (i, j).

        Computed as (index - (R-1)/2) * cell so the central cell of the odd
        grid sits exactly at the origin.
        """
        cell = self.cell_size
        mid = (self.resolution - 1) // 2
        return (i - mid) * cell, (j - mid) * cell

    def project(self, points) -> np.ndarray:
        """Project points to (u, v, depth) rows in this frame."""
        basis = np.stack([self.u_axis, self.v_axis, self.w_axis], axis=-1)
        return (np.asarray(points, dtype=np.float64) - self.origin) @ basis

    def lift(self, u: float, v: float, depth: float) -> np.ndarray:
        return self.origin + u * self.u_axis + v * self.v_axis + depth * self.w_axis


@dataclass(frozen=True)
class KaplanConfig:
    """Descriptor geometry and aggregation parameters.

    side_length may be left None where a pipeline resolves it at run time
    (full bounding-box extent at the coarsest level, halved per level);
    building a descriptor requires it to be set.
    """

    num_planes: int = 3
    resolution: int = 35
    side_length: float | None = None
    orientation_mode: str = "canonical"
    depth_agg_threshold: float = 0.001
    valid_center_radius: float = 0.4
    rng_seed: int = 0

    def __post_init__(self):
        if self.orientation_mode not in ORIENTATION_MODES:
            raise ValueError(f"orientation_mode must be one of {ORIENTATION_MODES}")
        if self.num_planes < 1:
            raise ValueError("num_planes must be >= 1")
        if self.orientation_mode == "canonical" and self.num_planes not in (3, 9, 27):
            raise ValueError("canonical orientation supports 3, 9 or 27 planes")
        if self.orientation_mode == "tangential" and self.num_planes != 1:
            raise ValueError("tangential orientation uses exactly 1 plane")
        if self.resolution < 3 or self.resolution % 2 == 0:
            raise ValueError("resolution must be odd and >= 3")
        if self.side_length is not None and not self.side_length > 0:
            raise ValueError("side_length must be positive")
        if not self.depth_agg_threshold > 0:
            raise ValueError("depth_agg_threshold must be positive")
        if not self.valid_center_radius > 0:
            raise ValueError("valid_center_radius must be positive")

    @property
    def cell_size(self) -> float:
        if self.side_length is None:
            raise ValueError("side_length is not set")
        return self.side_length / self.resolution

    def with_side(self, side_length: float) -> "KaplanConfig":
        return replace(self, side_length=float(side_length))


@dataclass
class KaplanDescriptor:
    """K plane frames with stacked channel images.

    depth and valid are (K, R, R); normal is (K, R, R, 3) holding global
    unit normals at valid cells and zeros elsewhere. Depth at invalid
    cells is zero.
    """

    planes: list[PlaneFrame]
    depth: np.ndarray
    valid: np.ndarray
    normal: np.ndarray
    query: np.ndarray
    query_index: int = 0

    def __post_init__(self):
        k = len(self.planes)
        if k < 1:
            raise ValueError("descriptor needs at least one plane")
        r = self.planes[0].resolution
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=np.float64)
        self.normal = np.asarray(self.normal, dtype=np.float64)
        self.query = _as_point(self.query)
        if self.depth.shape != (k, r, r) or self.valid.shape != (k, r, r):
            raise ValueError("channel shapes must be (K, R, R)")
        if self.normal.shape != (k, r, r, 3):
            raise ValueError("normal channel shape must be (K, R, R, 3)")
        if any(p.resolution != r for p in self.planes):
            raise ValueError("all planes must share one resolution")

    @property
    def num_planes(self) -> int:
        return len(self.planes)

    @property
    def resolution(self) -> int:
        return self.planes[0].resolution

    @property
    def normal_x(self) -> np.ndarray:
        return self.normal[..., 0]

    @property
    def normal_y(self) -> np.ndarray:
        return self.normal[..., 1]

    @property
    def normal_z(self) -> np.ndarray:
        return self.normal[..., 2]

    def copy(self) -> "KaplanDescriptor":
        return KaplanDescriptor(
            planes=list(self.planes),
            depth=self.depth.copy(),
            valid=self.valid.copy(),
            normal=self.normal.copy(),
            query=self.query.copy(),
            query_index=self.query_index,
        )

    def same_layout(self, other: "KaplanDescriptor") -> bool:
        if self.num_planes != other.num_planes or self.resolution != other.resolution:
            return False
        for a, b in zip(self.planes, other.planes):
            for name in ("origin", "u_axis", "v_axis", "w_axis"):
                if not np.array_equal(getattr(a, name), getattr(b, name)):
                    return False
            if a.side_length != b.side_length:
                return False
        return True


def _frame_axes(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic in-plane axes: u follows the coordinate axis cyclically
    next after the dominant component of the normal, v = w x u."""
    dominant = int(np.argmax(np.abs(normal)))
    seed_axis = _AXES[(dominant + 1) % 3]
    u = seed_axis - np.dot(seed_axis, normal) * normal
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    return u, v


def _axis_rotation(axis: int, degrees: float) -> np.ndarray:
    c = math.cos(math.radians(degrees))
    s = math.sin(math.radians(degrees))
    m = np.zeros((3, 3))
    m[axis, axis] = 1.0
    a, b = (axis + 1) % 3, (axis + 2) % 3
    m[a, a] = c
    m[b, b] = c
    m[b, a] = s
    m[a, b] = -s
    return m


def _canonical_sign(d: np.ndarray) -> np.ndarray:
    for component in d:
        if abs(component) > 1e-9:
            return d if component > 0 else -d
    return d


def _extend_unoriented(directions: list[np.ndarray], candidates) -> list[np.ndarray]:
    """Append candidates that are not (anti)parallel to a kept direction."""
    for cand in candidates:
        cand = _canonical_sign(cand / np.linalg.norm(cand))
        if all(abs(abs(cand @ d)) < 1.0 - 1e-9 for d in directions):
            directions.append(cand)
    return directions


def _canonical_directions(k: int) -> np.ndarray:
    """Plane normals for canonical mode.

    K=3 are the coordinate axes. K=9 adds each axis plane tilted +-45
    degrees about the cyclically next axis (the six face diagonals). K=27
    closes the 9 set under 45-degree-step rotations about the coordinate
    axes, deduplicating up to sign and keeping the first 27 directions in
    generation order (the 9 set is a prefix).
    """
    if k == 3:
        return _AXES.copy()
    s = math.sqrt(0.5)
    nine = [
        np.array(d, dtype=np.float64)
        for d in [
            (1, 0, 0), (s, 0, -s), (s, 0, s),
            (0, 1, 0), (-s, s, 0), (s, s, 0),
            (0, 0, 1), (0, -s, s), (0, s, s),
        ]
    ]
    if k == 9:
        return np.array(nine)
    if k == 27:
        directions = list(nine)
        while len(directions) < 27:
            frontier = list(directions)
            candidates = (
                _axis_rotation(axis, 45.0 * step) @ d
                for d in frontier
                for axis in range(3)
                for step in range(8)
            )
            _extend_unoriented(directions, candidates)
        return np.array(directions[:27])
    raise ValueError("canonical orientation supports 3, 9 or 27 planes")


def _pairwise_plane_angle_ok(directions: list[np.ndarray], candidate: np.ndarray) -> bool:
    for d in directions:
        cos = min(1.0, abs(float(np.dot(d, candidate))))
        if math.degrees(math.acos(cos)) < 30.0:
            return False
    return True


def make_planes(query, config: KaplanConfig, query_normal=None) -> list[PlaneFrame]:
    """Instantiate the descriptor planes at a query point.

    canonical: fixed direction sets for K in {3, 9, 27}. random_min30:
    seeded rejection sampling keeping all pairwise plane angles >= 30
    degrees. tangential: one plane normal to query_normal (required).
    """
    if config.side_length is None:
        raise ValueError("side_length is not set")
    q = _as_point(query)

    if config.orientation_mode == "canonical":
        normals = _canonical_directions(config.num_planes)
    elif config.orientation_mode == "tangential":
        if query_normal is None:
            raise ValueError("tangential orientation requires a query normal")
        n = _as_point(query_normal)
        length = np.linalg.norm(n)
        if length == 0:
            raise ValueError("tangential orientation requires a nonzero normal")
        normals = (n / length)[None, :]
    else:
        rng = np.random.default_rng(config.rng_seed)
        chosen: list[np.ndarray] = []
        rounds = 0
        while len(chosen) < config.num_planes:
            if rounds >= 1000:
                raise ValueError(
                    "could not draw plane normals with pairwise angles >= 30 degrees"
                )
            z = rng.uniform(-1.0, 1.0)
            phi = rng.uniform(0.0, 2.0 * math.pi)
            r = math.sqrt(max(0.0, 1.0 - z * z))
            cand = np.array([r * math.cos(phi), r * math.sin(phi), z])
            rounds += 1
            if _pairwise_plane_angle_ok(chosen, cand):
                chosen.append(cand)
        normals = np.array(chosen)

    frames = []
    for w in normals:
        u, v = _frame_axes(w)
        frames.append(
            PlaneFrame(
                origin=q,
                u_axis=u,
                v_axis=v,
                w_axis=w,
                side_length=config.side_length,
                resolution=config.resolution,
            )
        )
    return frames


def collect_box_neighbors(cloud: PointCloud, query, side_length: float) -> np.ndarray:
    """Ascending indices of points with Chebyshev distance <= side_length/2
    from the query (the axis-aligned box constraint shared by all planes)."""
    if not side_length > 0:
        raise ValueError("side_length must be positive")
    if len(cloud) == 0:
        return np.empty(0, dtype=np.intp)
    q = _as_point(query)
    r = 0.5 * side_length
    candidates = np.asarray(
        cloud.tree.query_ball_point(q, r * (1.0 + _RADIUS_SLACK) + 1e-300, p=np.inf),
        dtype=np.intp,
    )
    if candidates.size == 0:
        return candidates
    keep = np.abs(cloud.points[candidates] - q).max(axis=1) <= r
    return np.sort(candidates[keep])


def aggregate_cell_depths(depths, threshold: float) -> tuple[float, list[int]]:
    """Cluster one cell's depths onto the surface nearest the plane.

    Entries are visited by ascending absolute depth (ties by index); the
    cluster starts at the lowest-|depth| entry and absorbs the next entry
    while its gap to the running cluster mean stays <= threshold. Returns
    the cluster mean and the member indices in absorption order.
    """
    d = np.asarray(depths, dtype=np.float64)
    if d.ndim != 1 or d.size == 0:
        raise ValueError("depths must be a non-empty 1-D sequence")
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    order = np.lexsort((np.arange(d.size), np.abs(d)))
    members = [int(order[0])]
    mean = float(d[order[0]])
    for idx in order[1:]:
        if abs(float(d[idx]) - mean) <= threshold:
            members.append(int(idx))
            mean = float(np.mean(d[members]))
        else:
            break
    return mean, members


def attribute_valid_flags(
    plane: PlaneFrame,
    counts: np.ndarray,
    barycenter_u: np.ndarray,
    barycenter_v: np.ndarray,
    center_radius: float,
) -> np.ndarray:
    """Two-pass valid flags from per-cell projection counts and barycenters.

    Pass 1 marks a cell valid when it received at least one projection and
    the in-cell barycenter lies within center_radius * cell_size of the
    cell center. Pass 2 rescues cells that received a projection and have
    at least 3 valid 8-neighbors after pass 1. No further iteration.
    """
    r = plane.resolution
    counts = np.asarray(counts)
    if counts.shape != (r, r):
        raise ValueError("counts grid must match the plane resolution")
    cell = plane.cell_size
    centers = (np.arange(r) - (r - 1) // 2) * cell
    with np.errstate(invalid="ignore"):
        du = np.asarray(barycenter_u, dtype=np.float64) - centers[:, None]
        dv = np.asarray(barycenter_v, dtype=np.float64) - centers[None, :]
        near_center = np.hypot(du, dv) <= center_radius * cell
    occupied = counts > 0
    pass1 = occupied & np.where(np.isnan(du) | np.isnan(dv), False, near_center)

    padded = np.pad(pass1.astype(np.int64), 1)
    neighbor_count = (
        padded[:-2, :-2] + padded[:-2, 1:-1] + padded[:-2, 2:]
        + padded[1:-1, :-2] + padded[1:-1, 2:]
        + padded[2:, :-2] + padded[2:, 1:-1] + padded[2:, 2:]
    )
    rescued = occupied & ~pass1 & (neighbor_count >= 3)
    return (pass1 | rescued).astype(np.float64)


def _plane_channels(
    uvd: np.ndarray,
    normals: np.ndarray | None,
    plane: PlaneFrame,
    threshold: float,
    center_radius: float,
):
    """Depth, valid and normal channels for one plane (vectorized over cells).

    The per-cell depth clustering equals aggregate_cell_depths applied to
    every occupied cell: within each cell the rows are ordered by |depth|
    (ties by arrival index) and absorbed while the gap to the running
    prefix mean stays <= threshold.
    """
    r = plane.resolution
    cell = plane.cell_size
    half = 0.5 * plane.side_length
    shape = (r, r)

    depth_img = np.zeros(shape)
    normal_img = np.zeros(shape + (3,))
    counts = np.zeros(shape, dtype=np.int64)
    bary_u = np.full(shape, np.nan)
    bary_v = np.full(shape, np.nan)

    u, v, d = uvd[:, 0], uvd[:, 1], uvd[:, 2]
    inside = (np.abs(u) <= half) & (np.abs(v) <= half)
    if inside.any():
        u, v, d = u[inside], v[inside], d[inside]
        nrm = normals[inside] if normals is not None else None
        iu = np.clip(np.floor((u + half) / cell).astype(np.intp), 0, r - 1)
        jv = np.clip(np.floor((v + half) / cell).astype(np.intp), 0, r - 1)
        cid = iu * r + jv
        ncells = r * r

        counts = np.bincount(cid, minlength=ncells).reshape(shape)
        with np.errstate(invalid="ignore"):
            bary_u = (np.bincount(cid, weights=u, minlength=ncells).reshape(shape)
                      / counts)
            bary_v = (np.bincount(cid, weights=v, minlength=ncells).reshape(shape)
                      / counts)

        order = np.lexsort((np.arange(d.size), np.abs(d), cid))
        cs = cid[order]
        ds = d[order]
        new_seg = np.r_[True, cs[1:] != cs[:-1]]
        seg_start = np.flatnonzero(new_seg)
        seg_index = np.cumsum(new_seg) - 1
        pos = np.arange(ds.size) - seg_start[seg_index]
        cums = np.cumsum(ds)
        base = np.r_[0.0, cums][seg_start[seg_index]]
        prev_sum = np.r_[0.0, cums[:-1]] - base
        with np.errstate(invalid="ignore", divide="ignore"):
            prev_mean = prev_sum / pos
        sentinel = ds.size + 1
        violation = np.where((pos >= 1) & (np.abs(ds - prev_mean) > threshold), pos, sentinel)
        first_violation = np.minimum.reduceat(violation, seg_start)
        seg_len = np.diff(np.r_[seg_start, ds.size])
        absorbed = np.where(first_violation == sentinel, seg_len, first_violation)
        member = pos < absorbed[seg_index]

        mcid = cs[member]
        member_count = np.bincount(mcid, minlength=ncells)
        occupied = member_count > 0
        sums = np.bincount(mcid, weights=ds[member], minlength=ncells)
        flat_depth = np.zeros(ncells)
        flat_depth[occupied] = sums[occupied] / member_count[occupied]
        depth_img = flat_depth.reshape(shape)

        if nrm is not None:
            ns = nrm[order][member]
            mean_n = np.zeros((ncells, 3))
            for c in range(3):
                mean_n[occupied, c] = (
                    np.bincount(mcid, weights=ns[:, c], minlength=ncells)[occupied]
                    / member_count[occupied]
                )
            length = np.linalg.norm(mean_n, axis=1)
            degenerate = occupied & (length < 1e-12)
            keep = occupied & ~degenerate
            mean_n[keep] /= length[keep, None]
            mean_n[degenerate] = plane.w_axis
            normal_img = mean_n.reshape(shape + (3,))

    valid_img = attribute_valid_flags(plane, counts, bary_u, bary_v, center_radius)
    invalid = valid_img == 0
    depth_img[invalid] = 0.0
    normal_img[invalid] = 0.0
    return depth_img, valid_img, normal_img


def build_on_planes(
    cloud: PointCloud,
    planes: list[PlaneFrame],
    config: KaplanConfig,
    query_index: int = 0,
) -> KaplanDescriptor:
    """Build the channel images for an existing set of plane frames.

    All frames must share one origin and side length. Box neighbors are
    collected once in the axis-aligned frame and reused for every plane.
    Normal channels are zero when the cloud carries no normals.
    """
    if not planes:
        raise ValueError("need at least one plane")
    origin = planes[0].origin
    side = planes[0].side_length
    for p in planes[1:]:
        if not np.array_equal(p.origin, origin) or p.side_length != side:
            raise ValueError("planes must share origin and side length")
    if len(cloud) == 0:
        raise ValueError("empty input")

    neighbor_idx = collect_box_neighbors(cloud, origin, side)
    pts = cloud.points[neighbor_idx]
    nrm = cloud.normals[neighbor_idx] if cloud.has_normals else None

    k = len(planes)
    r = planes[0].resolution
    depth = np.zeros((k, r, r))
    valid = np.zeros((k, r, r))
    normal = np.zeros((k, r, r, 3))
    for ki, plane in enumerate(planes):
        uvd = plane.project(pts)
        depth[ki], valid[ki], normal[ki] = _plane_channels(
            uvd, nrm, plane, config.depth_agg_threshold, config.valid_center_radius
        )
    return KaplanDescriptor(
        planes=list(planes),
        depth=depth,
        valid=valid,
        normal=normal,
        query=origin,
        query_index=query_index,
    )


def build_kaplan(
    cloud: PointCloud,
    query,
    config: KaplanConfig,
    query_index: int = 0,
) -> KaplanDescriptor:
    """Instantiate planes at the query point and build the descriptor.

    Tangential orientation takes the normal of the cloud point nearest to
    the query, so it requires a cloud with normals.
    """
    query_normal = None
    if config.orientation_mode == "tangential":
        if not cloud.has_normals:
            raise ValueError("tangential orientation requires a cloud with normals")
        nearest = knn(cloud, query, 1)[0]
        query_normal = cloud.normals[nearest]
    planes = make_planes(query, config, query_normal=query_normal)
    return build_on_planes(cloud, planes, config, query_index=query_index)


@dataclass(frozen=True)
class LossWeights:
    w_valid: float = 0.75
    w_depth: float = 1.0
    w_normal: float = 0.01

    def __post_init__(self):
        if self.w_valid < 0 or self.w_depth < 0 or self.w_normal < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass(frozen=True)
class LossBreakdown:
    valid_loss: float
    depth_loss: float
    normal_loss: float
    total: float


def compute_losses(
    pred: KaplanDescriptor, gt: KaplanDescriptor, weights: LossWeights = LossWeights()
) -> LossBreakdown:
    """Three-term descriptor loss.

    Valid term: mean |V - V_hat| over every cell of every plane. Depth
    term: per plane, the mean |D - D_hat| over cells the ground truth
    marks valid, averaged over the K planes (a plane with no valid cell
    contributes 0). Normal term: same masking and averaging with the
    per-cell angular penalty 1 - cos(angle); cells where either normal is
    zero (normals absent or degenerate) contribute 0.
    """
    if pred.num_planes != gt.num_planes or pred.resolution != gt.resolution:
        raise ValueError("descriptors must share plane count and resolution")
    k = gt.num_planes

    valid_loss = float(np.mean(np.abs(pred.valid - gt.valid)))

    mask = gt.valid >= 0.5
    depth_terms = 0.0
    normal_terms = 0.0
    for ki in range(k):
        m = mask[ki]
        if not m.any():
            continue
        depth_terms += float(np.mean(np.abs(pred.depth[ki][m] - gt.depth[ki][m])))

        gn = gt.normal[ki][m]
        pn = pred.normal[ki][m]
        dot = np.einsum("ij,ij->i", gn, pn)
        norm_product = np.linalg.norm(gn, axis=1) * np.linalg.norm(pn, axis=1)
        cos = np.ones_like(dot)
        nonzero = norm_product > 0
        cos[nonzero] = np.clip(dot[nonzero] / norm_product[nonzero], -1.0, 1.0)
        # identical normals must cost exactly zero; norm*norm rounding
        # would otherwise leave ulp-level residue
        cos[np.all(gn == pn, axis=1)] = 1.0
        normal_terms += float(np.mean(1.0 - cos))
    depth_loss = depth_terms / k
    normal_loss = normal_terms / k

    total = (
        weights.w_valid * valid_loss
        + weights.w_depth * depth_loss
        + weights.w_normal * normal_loss
    )
    return LossBreakdown(valid_loss, depth_loss, normal_loss, total)
