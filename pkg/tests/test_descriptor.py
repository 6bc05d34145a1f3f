import math

import numpy as np
import pytest

from kaplan import (
    KaplanConfig,
    PlaneFrame,
    PointCloud,
    aggregate_cell_depths,
    attribute_valid_flags,
    build_kaplan,
    build_on_planes,
    collect_box_neighbors,
    make_planes,
)

from conftest import make_sphere
from oracles import aggregate_oracle, box_oracle


def axis_frame(side=1.0, resolution=35, origin=(0, 0, 0)):
    return PlaneFrame(
        origin=origin,
        u_axis=[1, 0, 0],
        v_axis=[0, 1, 0],
        w_axis=[0, 0, 1],
        side_length=side,
        resolution=resolution,
    )


def plane_angles(frames):
    out = []
    for i in range(len(frames)):
        for j in range(i + 1, len(frames)):
            cos = min(1.0, abs(float(frames[i].w_axis @ frames[j].w_axis)))
            out.append(math.degrees(math.acos(cos)))
    return out


class TestPlaneFrame:
    def test_rejects_even_resolution(self):
        with pytest.raises(ValueError, match="odd"):
            axis_frame(resolution=10)

    def test_rejects_left_handed(self):
        with pytest.raises(ValueError, match="right-handed"):
            PlaneFrame(
                origin=[0, 0, 0],
                u_axis=[1, 0, 0],
                v_axis=[0, 1, 0],
                w_axis=[0, 0, -1],
                side_length=1.0,
                resolution=5,
            )

    def test_central_cell_centered_at_origin(self):
        frame = axis_frame(side=1.0, resolution=35)
        u, v = frame.cell_center(17, 17)
        assert u == pytest.approx(0.0, abs=1e-12)
        assert v == pytest.approx(0.0, abs=1e-12)

    def test_project_lift_inverse(self):
        frame = make_planes([0.3, -0.2, 0.1], KaplanConfig(num_planes=9, side_length=0.8))[4]
        rng = np.random.default_rng(0)
        pts = rng.uniform(-0.3, 0.3, size=(20, 3)) + frame.origin
        uvd = frame.project(pts)
        back = np.array([frame.lift(*row) for row in uvd])
        assert np.allclose(back, pts, atol=1e-12)


class TestMakePlanes:
    def test_canonical_3_axes(self):
        frames = make_planes([0, 0, 0], KaplanConfig(num_planes=3, side_length=1.0))
        normals = np.array([f.w_axis for f in frames])
        assert np.array_equal(normals, np.eye(3))

    def test_canonical_9_distinct_min_30_degrees(self):
        frames = make_planes([0, 0, 0], KaplanConfig(num_planes=9, side_length=1.0))
        normals = {tuple(np.round(f.w_axis, 12)) for f in frames}
        assert len(normals) == 9
        assert min(plane_angles(frames)) >= 30.0

    def test_canonical_27_distinct(self):
        frames = make_planes([0, 0, 0], KaplanConfig(num_planes=27, side_length=1.0))
        assert len(frames) == 27
        assert min(plane_angles(frames)) > 10.0

    def test_random_seeded_reproducible(self):
        cfg = KaplanConfig(
            num_planes=2, side_length=1.0, orientation_mode="random_min30", rng_seed=5
        )
        a = make_planes([0, 0, 0], cfg)
        b = make_planes([0, 0, 0], cfg)
        for fa, fb in zip(a, b):
            assert np.array_equal(fa.w_axis, fb.w_axis)
        assert min(plane_angles(a)) >= 30.0

    def test_random_many_planes_respect_constraint(self):
        cfg = KaplanConfig(
            num_planes=5, side_length=1.0, orientation_mode="random_min30", rng_seed=1
        )
        frames = make_planes([0, 0, 0], cfg)
        assert min(plane_angles(frames)) >= 30.0

    def test_tangential_uses_query_normal(self):
        cfg = KaplanConfig(num_planes=1, side_length=1.0, orientation_mode="tangential")
        frames = make_planes([0, 0, 0], cfg, query_normal=[0, 1, 0])
        assert np.allclose(frames[0].w_axis, [0, 1, 0])
        with pytest.raises(ValueError, match="query normal"):
            make_planes([0, 0, 0], cfg)

    def test_frames_are_right_handed(self):
        for k in (3, 9, 27):
            for f in make_planes([0.1, 0.2, 0.3], KaplanConfig(num_planes=k, side_length=1.0)):
                assert np.allclose(np.cross(f.u_axis, f.v_axis), f.w_axis, atol=1e-12)


class TestBoxNeighbors:
    def test_inside_and_outside(self):
        cloud = PointCloud([[0.4, 0.4, 0.4], [0.51, 0.0, 0.0]])
        idx = collect_box_neighbors(cloud, [0, 0, 0], 1.0)
        assert idx.tolist() == [0]

    def test_boundary_inclusive(self):
        cloud = PointCloud([[0.5, 0.0, 0.0]])
        assert collect_box_neighbors(cloud, [0, 0, 0], 1.0).tolist() == [0]

    def test_matches_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            cloud = PointCloud(rng.uniform(-1, 1, size=(200, 3)))
            q = rng.uniform(-1, 1, size=3)
            side = rng.uniform(0.2, 1.5)
            assert np.array_equal(
                collect_box_neighbors(cloud, q, side),
                box_oracle(cloud.points, q, side),
            )


class TestAggregateCellDepths:
    def test_singleton(self):
        assert aggregate_cell_depths([0.3], 0.001) == (0.3, [0])

    def test_moving_average_example(self):
        mean, members = aggregate_cell_depths([0.1, 0.1005, 0.5], 0.001)
        assert mean == pytest.approx(0.10025)
        assert members == [0, 1]

    def test_lowest_absolute_depth_seeds(self):
        mean, members = aggregate_cell_depths([-0.05, 0.2], 0.001)
        assert mean == -0.05
        assert members == [0]

    def test_matches_oracle_random(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            n = int(rng.integers(1, 12))
            depths = rng.normal(0, 0.1, size=n).round(4).tolist()
            tau = float(rng.uniform(0.001, 0.2))
            got = aggregate_cell_depths(depths, tau)
            want = aggregate_oracle(depths, tau)
            assert got[1] == want[1]
            assert got[0] == pytest.approx(want[0], abs=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError):
            aggregate_cell_depths([], 0.1)
        with pytest.raises(ValueError):
            aggregate_cell_depths([0.1], 0.0)


class TestValidFlags:
    def frame(self):
        return axis_frame(side=3.0, resolution=3)  # cell size 1

    def test_empty_cell_invalid(self):
        counts = np.zeros((3, 3), dtype=int)
        nan = np.full((3, 3), np.nan)
        flags = attribute_valid_flags(self.frame(), counts, nan, nan, 0.4)
        assert flags.sum() == 0

    def test_center_projection_valid(self):
        frame = self.frame()
        counts = np.zeros((3, 3), dtype=int)
        bu = np.full((3, 3), np.nan)
        bv = np.full((3, 3), np.nan)
        counts[1, 1] = 1
        bu[1, 1], bv[1, 1] = frame.cell_center(1, 1)
        flags = attribute_valid_flags(frame, counts, bu, bv, 0.4)
        assert flags[1, 1] == 1 and flags.sum() == 1

    def test_rescue_pass(self):
        # center cell has corner-clustered projections (fails pass 1) but
        # four valid neighbors rescue it in pass 2
        frame = self.frame()
        counts = np.zeros((3, 3), dtype=int)
        bu = np.full((3, 3), np.nan)
        bv = np.full((3, 3), np.nan)
        for i, j in [(0, 1), (1, 0), (1, 2), (2, 1)]:
            counts[i, j] = 1
            bu[i, j], bv[i, j] = frame.cell_center(i, j)
        counts[1, 1] = 2
        cu, cv = frame.cell_center(1, 1)
        bu[1, 1], bv[1, 1] = cu + 0.45, cv + 0.45  # off-center barycenter
        flags = attribute_valid_flags(frame, counts, bu, bv, 0.4)
        assert flags[1, 1] == 1
        # without the occupied neighbors the same cell stays invalid
        solo = np.zeros((3, 3), dtype=int)
        solo[1, 1] = 2
        flags = attribute_valid_flags(frame, solo, bu, bv, 0.4)
        assert flags[1, 1] == 0

    def test_exactly_two_passes(self):
        # a chain that would keep growing under fixpoint iteration: the
        # rescue of one cell must not enable rescuing the next
        frame = axis_frame(side=5.0, resolution=5)
        counts = np.zeros((5, 5), dtype=int)
        bu = np.full((5, 5), np.nan)
        bv = np.full((5, 5), np.nan)
        for i, j in [(0, 1), (1, 0), (1, 2), (2, 1), (2, 2), (3, 1)]:
            counts[i, j] = 1
        # (1,1) gets 3 pass-1 valid neighbors; (2,1) sits next to (1,1)
        for i, j in [(0, 1), (1, 0), (1, 2)]:
            bu[i, j], bv[i, j] = frame.cell_center(i, j)
        off = 0.45
        for i, j in [(2, 1), (2, 2), (3, 1), (1, 1)]:
            cu, cv = frame.cell_center(i, j)
            bu[i, j], bv[i, j] = cu + off, cv + off
        counts[1, 1] = 1
        flags = attribute_valid_flags(frame, counts, bu, bv, 0.4)
        assert flags[1, 1] == 1  # rescued by pass-1 neighbors
        assert flags[2, 1] == 0  # (1,1) was not valid in pass 1

    def test_center_projection_monotonicity(self):
        # adding a projection at the exact cell center never invalidates it
        rng = np.random.default_rng(21)
        frame = axis_frame(side=5.0, resolution=5)
        for _ in range(50):
            counts = rng.integers(0, 3, size=(5, 5))
            bu = np.full((5, 5), np.nan)
            bv = np.full((5, 5), np.nan)
            for i in range(5):
                for j in range(5):
                    if counts[i, j]:
                        cu, cv = frame.cell_center(i, j)
                        bu[i, j] = cu + rng.uniform(-0.5, 0.5)
                        bv[i, j] = cv + rng.uniform(-0.5, 0.5)
            before = attribute_valid_flags(frame, counts, bu, bv, 0.4)
            i, j = int(rng.integers(5)), int(rng.integers(5))
            cu, cv = frame.cell_center(i, j)
            n = counts[i, j]
            bu2, bv2 = bu.copy(), bv.copy()
            if n:
                bu2[i, j] = (n * bu[i, j] + cu) / (n + 1)
                bv2[i, j] = (n * bv[i, j] + cv) / (n + 1)
            else:
                bu2[i, j], bv2[i, j] = cu, cv
            counts2 = counts.copy()
            counts2[i, j] += 1
            after = attribute_valid_flags(frame, counts2, bu2, bv2, 0.4)
            if before[i, j] == 1:
                assert after[i, j] == 1


class TestBuildKaplan:
    def test_single_point_at_query(self):
        cloud = PointCloud([[0.0, 0.0, 0.0]], normals=[[0.0, 0.0, 1.0]])
        desc = build_kaplan(cloud, [0, 0, 0], KaplanConfig(side_length=1.0))
        c = desc.resolution // 2
        for k in range(3):
            assert desc.valid[k][c, c] == 1.0
            assert desc.depth[k][c, c] == 0.0
        assert desc.valid.sum() == 3.0

    def test_coplanar_square(self):
        rng = np.random.default_rng(17)
        pts = np.column_stack([rng.uniform(-0.4, 0.4, size=(500, 2)), np.zeros(500)])
        cloud = PointCloud(pts, np.tile([0.0, 0.0, 1.0], (500, 1)))
        cfg = KaplanConfig(num_planes=3, resolution=9, side_length=1.0)
        desc = build_kaplan(cloud, [0.0, 0.0, 0.0], cfg)
        z_plane = 2  # canonical order: x, y, z normals
        valid = desc.valid[z_plane] == 1
        assert valid.sum() > 40
        assert np.allclose(desc.depth[z_plane][valid], 0.0, atol=1e-12)
        assert np.allclose(np.abs(desc.normal[z_plane][valid][:, 2]), 1.0)

    def test_two_sheets_keep_lower_absolute_depth(self):
        # sheets at z=+0.1 and z=-0.2 under the +z plane: every valid cell
        # must carry the +0.1 sheet, cell-by-cell against the scalar rule
        rng = np.random.default_rng(19)
        xy = rng.uniform(-0.45, 0.45, size=(800, 2))
        top = np.column_stack([xy[:400], np.full(400, 0.1)])
        bottom = np.column_stack([xy[400:], np.full(400, -0.2)])
        cloud = PointCloud(np.vstack([top, bottom]))
        cfg = KaplanConfig(num_planes=3, resolution=7, side_length=1.0)
        desc = build_kaplan(cloud, [0.0, 0.0, 0.0], cfg)
        z_plane = 2
        valid = desc.valid[z_plane] == 1
        assert valid.any()
        assert np.allclose(desc.depth[z_plane][valid], 0.1, atol=1e-12)

    def test_grid_clustering_matches_scalar_op(self):
        # the vectorized per-cell aggregation must equal aggregate_cell_depths
        # applied to each cell's depths independently
        rng = np.random.default_rng(23)
        cloud = PointCloud(rng.uniform(-0.5, 0.5, size=(600, 3)))
        cfg = KaplanConfig(num_planes=3, resolution=5, side_length=1.0,
                           depth_agg_threshold=0.05)
        desc = build_kaplan(cloud, [0.0, 0.0, 0.0], cfg)
        frame = desc.planes[0]
        uvd = frame.project(cloud.points)
        half, cell = 0.5, 1.0 / 5
        inside = (np.abs(uvd[:, 0]) <= half) & (np.abs(uvd[:, 1]) <= half)
        uvd = uvd[inside]
        iu = np.clip(np.floor((uvd[:, 0] + half) / cell).astype(int), 0, 4)
        jv = np.clip(np.floor((uvd[:, 1] + half) / cell).astype(int), 0, 4)
        for i in range(5):
            for j in range(5):
                depths = uvd[(iu == i) & (jv == j), 2]
                if depths.size and desc.valid[0][i, j] == 1:
                    mean, _ = aggregate_cell_depths(depths.tolist(), 0.05)
                    assert desc.depth[0][i, j] == pytest.approx(mean, abs=1e-12)

    def test_rotation_covariance_axis_permutation(self):
        # permuting coordinates of cloud and plane frames together leaves
        # all channel images unchanged
        rng = np.random.default_rng(29)
        pts = rng.uniform(-0.4, 0.4, size=(300, 3))
        normals = rng.normal(size=(300, 3))
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        perm = [1, 2, 0]  # cyclic permutation is a rotation
        cfg = KaplanConfig(num_planes=3, resolution=7, side_length=1.0)
        base = build_kaplan(PointCloud(pts, normals), [0.0, 0.0, 0.0], cfg)
        rotated_cloud = PointCloud(pts[:, perm], normals[:, perm])
        frames = [
            PlaneFrame(
                origin=p.origin[perm],
                u_axis=p.u_axis[perm],
                v_axis=p.v_axis[perm],
                w_axis=p.w_axis[perm],
                side_length=p.side_length,
                resolution=p.resolution,
            )
            for p in base.planes
        ]
        rotated = build_on_planes(rotated_cloud, frames, cfg)
        assert np.array_equal(rotated.depth, base.depth)
        assert np.array_equal(rotated.valid, base.valid)
        # renormalizing averaged normals sums squares in permuted order,
        # so the normal channel is only equal to the last ulp
        assert np.allclose(rotated.normal, base.normal[..., perm], atol=2e-16)

    def test_determinism(self):
        cloud = make_sphere(500, seed=31)
        cfg = KaplanConfig(side_length=1.0)
        a = build_kaplan(cloud, cloud.points[3], cfg)
        b = build_kaplan(cloud, cloud.points[3], cfg)
        assert np.array_equal(a.depth, b.depth)
        assert np.array_equal(a.valid, b.valid)
        assert np.array_equal(a.normal, b.normal)

    def test_normals_off_mode(self):
        cloud = PointCloud(np.random.default_rng(1).uniform(-0.4, 0.4, size=(200, 3)))
        desc = build_kaplan(cloud, [0.0, 0.0, 0.0], KaplanConfig(side_length=1.0))
        assert np.all(desc.normal == 0.0)

    def test_all_invalid_descriptor_is_legal(self):
        cloud = PointCloud([[5.0, 5.0, 5.0]])
        desc = build_kaplan(cloud, [0.0, 0.0, 0.0], KaplanConfig(side_length=1.0))
        assert desc.valid.sum() == 0

    def test_valid_cell_normals_unit(self):
        cloud = make_sphere(2000, seed=37)
        desc = build_kaplan(cloud, cloud.points[0], KaplanConfig(side_length=1.0))
        mask = desc.valid == 1
        lengths = np.linalg.norm(desc.normal[mask], axis=-1)
        assert np.all(lengths > 0)
        assert np.abs(lengths - 1.0).max() <= 1e-6
